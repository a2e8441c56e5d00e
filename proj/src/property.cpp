#include "kgic/property.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <ostream>
#include <set>

#include "kgic/error.hpp"
#include "kgic/ingest.hpp"

namespace kgic {

namespace {

std::vector<std::string> distinct_types(const EntityMeta& meta) {
    std::vector<std::string> out;
    for (const auto& t : meta.types)
        if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
    return out;
}

// Keeps the k best (similarity desc, handle asc) candidates.
template <typename Id>
void keep_top_k(std::vector<std::pair<Id, double>>& cands, std::size_t k) {
    auto better = [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    };
    if (cands.size() > k) {
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k), cands.end(), better);
        cands.resize(k);
    } else {
        std::sort(cands.begin(), cands.end(), better);
    }
}

void check_same_shape(std::size_t r1, std::size_t c1, std::size_t r2, std::size_t c2, const char* what) {
    if (r1 != r2 || c1 != c2)
        throw Error(std::string(what) + ": shape mismatch " + std::to_string(r1) + "x" + std::to_string(c1) +
                    " vs " + std::to_string(r2) + "x" + std::to_string(c2));
}

}  // namespace

// ---- Recoin ----------------------------------------------------------------

std::size_t ClassStats::freq_of(std::string_view cls, RelationId r) const {
    auto it = class_index.find(std::string(cls));
    return it == class_index.end() ? 0 : freq[it->second].at(index(r));
}

std::size_t ClassStats::size_of(std::string_view cls) const {
    auto it = class_index.find(std::string(cls));
    return it == class_index.end() ? 0 : size[it->second];
}

ClassStats build_class_stats(const KnowledgeGraph& graph, TripleSubset train) {
    if (train.empty()) throw Error("build_class_stats: empty train split");
    ClassStats stats;
    stats.num_relations = graph.num_relations();
    stats.train_fingerprint = split_fingerprint(train);
    for (const auto& cls : graph.classes().labels()) {
        stats.class_index.emplace(cls, stats.classes.size());
        stats.classes.push_back(cls);
    }
    stats.size.assign(stats.classes.size(), 0);
    stats.freq.assign(stats.classes.size(), std::vector<std::size_t>(graph.num_relations(), 0));

    const auto props = property_matrix(graph, train);
    for (std::size_t e = 0; e < graph.num_entities(); ++e) {
        for (const auto& cls : distinct_types(graph.meta(entity_at(e)))) {
            const auto c = stats.class_index.at(cls);
            ++stats.size[c];
            const auto row = props.row(e);
            for (std::size_t r = 0; r < row.size(); ++r) stats.freq[c][r] += row[r];
        }
    }
    return stats;
}

RecoinResult recoin_scores(const KnowledgeGraph& graph, EntityId entity, const ClassStats& stats) {
    RecoinResult result;
    result.scores.assign(stats.num_relations, 0.0);
    std::size_t total_size = 0;
    std::vector<std::size_t> total_freq(stats.num_relations, 0);
    for (const auto& cls : distinct_types(graph.meta(entity))) {
        auto it = stats.class_index.find(cls);
        if (it == stats.class_index.end()) continue;
        total_size += stats.size[it->second];
        for (std::size_t r = 0; r < stats.num_relations; ++r) total_freq[r] += stats.freq[it->second][r];
    }
    if (total_size == 0) {
        result.no_classes = true;
        return result;
    }
    for (std::size_t r = 0; r < stats.num_relations; ++r)
        result.scores[r] = static_cast<double>(total_freq[r]) / static_cast<double>(total_size);
    return result;
}

RecoinPredictor::RecoinPredictor(const KnowledgeGraph& graph, TripleSubset train)
    : graph_(graph), stats_(build_class_stats(graph, train)) {}

PropertyScores RecoinPredictor::scores(EntityId entity) {
    auto result = recoin_scores(graph_, entity, stats_);
    if (result.no_classes) ++untyped_;
    return std::move(result.scores);
}

// ---- Item-KNN --------------------------------------------------------------

PropertyIndex::PropertyIndex(const BinaryMatrix& properties)
    : matrix_(properties), num_relations_(properties.cols), rows_(properties.rows), postings_(properties.cols) {
    for (std::size_t e = 0; e < properties.rows; ++e) {
        const auto row = properties.row(e);
        for (std::size_t r = 0; r < row.size(); ++r) {
            if (!row[r]) continue;
            rows_[e].push_back(static_cast<std::uint32_t>(r));
            postings_[r].push_back(static_cast<std::uint32_t>(e));
        }
    }
}

std::vector<std::pair<EntityId, double>> PropertyIndex::similar(std::span<const std::uint32_t> query) const {
    std::vector<std::pair<EntityId, double>> out;
    if (query.empty()) return out;
    std::unordered_map<std::uint32_t, std::uint32_t> overlap;
    for (const auto r : query)
        for (const auto e : postings_.at(r)) ++overlap[e];
    const double qn = std::sqrt(static_cast<double>(query.size()));
    out.reserve(overlap.size());
    for (const auto& [e, common] : overlap) {
        const double en = std::sqrt(static_cast<double>(rows_[e].size()));
        out.emplace_back(entity_at(e), static_cast<double>(common) / (qn * en));
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
}

PropertyScores knn_scores(const PropertyIndex& properties, EntityId entity, std::size_t k) {
    if (k == 0) throw Error("knn_scores: k must be >= 1");
    PropertyScores scores(properties.num_relations(), 0.0);
    auto cands = properties.similar(properties.relations_of(entity));
    std::erase_if(cands, [&](const auto& c) { return c.first == entity; });
    if (cands.empty()) return scores;
    keep_top_k(cands, k);
    for (const auto& [e, sim] : cands)
        for (const auto r : properties.relations_of(e)) scores[r] += 1.0;
    for (auto& s : scores) s /= static_cast<double>(cands.size());
    return scores;
}

PropertyScores knn_scores(EntityId entity, const BinaryMatrix& properties, std::size_t k) {
    return knn_scores(PropertyIndex(properties), entity, k);
}

// ---- TF-IDF ----------------------------------------------------------------

double SparseVector::dot(const SparseVector& other) const {
    double sum = 0;
    auto a = entries.begin();
    auto b = other.entries.begin();
    while (a != entries.end() && b != other.entries.end()) {
        if (a->first < b->first) ++a;
        else if (b->first < a->first) ++b;
        else {
            sum += a->second * b->second;
            ++a;
            ++b;
        }
    }
    return sum;
}

std::vector<std::string> tokenize_text(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (const char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || c >= 0x80) {
            cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::string entity_document(const KnowledgeGraph& graph, EntityId e, TextMask mask) {
    std::string doc = graph.entity_label(e);
    const auto& meta = graph.meta(e);
    if (!mask.types)
        for (const auto& t : meta.types) doc += " " + t;
    if (!mask.description && !meta.description.empty()) doc += " " + meta.description;
    return doc;
}

TfidfModel::TfidfModel(std::span<const std::string> corpus) {
    if (corpus.empty()) throw Error("tfidf: empty corpus");
    std::vector<std::map<std::string, std::size_t>> counts(corpus.size());
    std::map<std::string, std::size_t> df;
    for (std::size_t d = 0; d < corpus.size(); ++d) {
        for (auto& tok : tokenize_text(corpus[d])) ++counts[d][tok];
        for (const auto& [tok, _] : counts[d]) ++df[tok];
    }
    const double n = static_cast<double>(corpus.size());
    for (const auto& [tok, f] : df) {
        vocab_.emplace(tok, static_cast<std::uint32_t>(idf_.size()));
        idf_.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(f))) + 1.0);
    }
    postings_.resize(idf_.size());
    docs_.resize(corpus.size());
    for (std::size_t d = 0; d < corpus.size(); ++d) {
        auto& v = docs_[d].entries;
        double norm2 = 0;
        for (const auto& [tok, tf] : counts[d]) {
            const auto id = vocab_.at(tok);
            const double w = static_cast<double>(tf) * idf_[id];
            v.emplace_back(id, w);
            norm2 += w * w;
        }
        std::sort(v.begin(), v.end());
        const double norm = norm2 > 0 ? std::sqrt(norm2) : 1.0;
        for (auto& [id, w] : v) {
            w /= norm;
            postings_[id].emplace_back(static_cast<std::uint32_t>(d), w);
        }
    }
}

double TfidfModel::idf(std::string_view term) const {
    auto it = vocab_.find(std::string(term));
    return it == vocab_.end() ? 0.0 : idf_[it->second];
}

SparseVector TfidfModel::transform(std::string_view text) const {
    std::map<std::uint32_t, std::size_t> tf;
    for (const auto& tok : tokenize_text(text))
        if (auto it = vocab_.find(tok); it != vocab_.end()) ++tf[it->second];
    SparseVector v;
    double norm2 = 0;
    for (const auto& [id, f] : tf) {
        const double w = static_cast<double>(f) * idf_[id];
        v.entries.emplace_back(id, w);
        norm2 += w * w;
    }
    const double norm = norm2 > 0 ? std::sqrt(norm2) : 1.0;
    for (auto& [id, w] : v.entries) w /= norm;
    return v;
}

std::vector<std::pair<std::size_t, double>> TfidfModel::similar(const SparseVector& query) const {
    std::unordered_map<std::uint32_t, double> acc;
    for (const auto& [term, qw] : query.entries)
        for (const auto& [doc, dw] : postings_[term]) acc[doc] += qw * dw;
    std::vector<std::pair<std::size_t, double>> out;
    out.reserve(acc.size());
    for (const auto& [doc, s] : acc)
        if (s > 0) out.emplace_back(doc, s);
    std::sort(out.begin(), out.end());
    return out;
}

TfidfModel tfidf_features(const KnowledgeGraph& graph, TextMask mask) {
    std::vector<std::string> corpus;
    corpus.reserve(graph.num_entities());
    for (std::size_t e = 0; e < graph.num_entities(); ++e) corpus.push_back(entity_document(graph, entity_at(e), mask));
    return TfidfModel(corpus);
}

PropertyScores content_scores(const TfidfModel& tfidf, EntityId entity, const PropertyIndex& properties,
                              std::size_t k) {
    if (k == 0) throw Error("content_scores: k must be >= 1");
    PropertyScores scores(properties.num_relations(), 0.0);
    std::vector<std::pair<EntityId, double>> cands;
    for (const auto& [doc, sim] : tfidf.similar(tfidf.document(index(entity)))) {
        const auto e = entity_at(doc);
        if (e == entity || properties.relations_of(e).empty()) continue;
        cands.emplace_back(e, sim);
    }
    if (cands.empty()) return scores;
    keep_top_k(cands, k);
    double total = 0;
    for (const auto& [e, sim] : cands) total += sim;
    for (const auto& [e, sim] : cands)
        for (const auto r : properties.relations_of(e)) scores[r] += sim / total;
    for (auto& s : scores) s = std::min(s, 1.0);
    return scores;
}

PropertyScores hybrid_scores(std::span<const double> knn, std::span<const double> content, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("hybrid_scores: alpha must be in [0, 1]");
    if (knn.size() != content.size()) throw Error("hybrid_scores: length mismatch");
    PropertyScores out(knn.size());
    for (std::size_t i = 0; i < knn.size(); ++i) out[i] = alpha * knn[i] + (1.0 - alpha) * content[i];
    return out;
}

HybridPredictor::HybridPredictor(const KnowledgeGraph& graph, TripleSubset train, HybridOptions options)
    : options_(options),
      properties_(property_matrix(graph, train)),
      tfidf_(tfidf_features(graph, options.mask)),
      fingerprint_(split_fingerprint(train)) {}

PropertyScores HybridPredictor::scores(EntityId entity) {
    const auto knn = knn_scores(properties_, entity, options_.k);
    const auto content = content_scores(tfidf_, entity, properties_, options_.k);
    return hybrid_scores(knn, content, options_.alpha);
}

// ---- Loss, thresholds, metrics ---------------------------------------------

double bce_loss(const ScoreMatrix& pred, const BinaryMatrix& gold) {
    check_same_shape(pred.rows, pred.cols, gold.rows, gold.cols, "bce_loss");
    if (pred.rows == 0) return 0.0;
    double sum = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double p = std::clamp(pred.data[i], kBceEpsilon, 1.0 - kBceEpsilon);
        sum += gold.data[i] ? std::log(p) : std::log(1.0 - p);
    }
    return -sum / static_cast<double>(pred.rows);
}

ScoreMatrix bce_gradient(const ScoreMatrix& pred, const BinaryMatrix& gold) {
    check_same_shape(pred.rows, pred.cols, gold.rows, gold.cols, "bce_gradient");
    ScoreMatrix grad(pred.rows, pred.cols);
    const double n = static_cast<double>(pred.rows);
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double raw = pred.data[i];
        const double p = std::clamp(raw, kBceEpsilon, 1.0 - kBceEpsilon);
        // Flat outside the clip range.
        if (p != raw) continue;
        const double y = gold.data[i];
        grad.data[i] = (p - y) / (p * (1.0 - p)) / n;
    }
    return grad;
}

std::vector<std::uint8_t> select_properties(std::span<const double> scores, double threshold) {
    std::vector<std::uint8_t> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] >= threshold ? 1 : 0;
    return out;
}

BinaryMatrix select_properties(const ScoreMatrix& scores, double threshold) {
    BinaryMatrix out(scores.rows, scores.cols);
    for (std::size_t i = 0; i < scores.data.size(); ++i) out.data[i] = scores.data[i] >= threshold ? 1 : 0;
    return out;
}

Prf micro_prf(const BinaryMatrix& pred, const BinaryMatrix& gold) {
    check_same_shape(pred.rows, pred.cols, gold.rows, gold.cols, "micro_prf");
    Prf m;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] != 0;
        const bool g = gold.data[i] != 0;
        m.tp += p && g;
        m.fp += p && !g;
        m.fn += !p && g;
    }
    const auto tp = static_cast<double>(m.tp);
    m.precision = m.tp + m.fp == 0 ? 0.0 : tp / static_cast<double>(m.tp + m.fp);
    m.recall = m.tp + m.fn == 0 ? 0.0 : tp / static_cast<double>(m.tp + m.fn);
    m.f1 = m.precision + m.recall == 0 ? 0.0 : 2 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

std::vector<double> default_threshold_grid() {
    std::vector<double> grid;
    for (int k = 1; k <= 19; ++k) grid.push_back(k / 20.0);
    return grid;
}

double tune_threshold(const ScoreMatrix& scores, const BinaryMatrix& gold, std::span<const double> grid) {
    if (grid.empty()) throw Error("tune_threshold: empty grid");
    check_same_shape(scores.rows, scores.cols, gold.rows, gold.cols, "tune_threshold");
    std::vector<double> sorted(grid.begin(), grid.end());
    std::sort(sorted.begin(), sorted.end());
    if (std::none_of(gold.data.begin(), gold.data.end(), [](auto v) { return v != 0; })) return sorted.back();
    double best = sorted.front();
    double best_f1 = -1;
    for (const double t : sorted) {
        const double f1 = micro_prf(select_properties(scores, t), gold).f1;
        if (f1 > best_f1) {
            best_f1 = f1;
            best = t;
        }
    }
    return best;
}

// ---- helpers ---------------------------------------------------------------

ScoreMatrix score_entities(PropertyPredictor& predictor, std::span<const EntityId> entities) {
    ScoreMatrix out;
    for (std::size_t i = 0; i < entities.size(); ++i) {
        auto s = predictor.scores(entities[i]);
        if (i == 0) out = ScoreMatrix(entities.size(), s.size());
        if (s.size() != out.cols) throw Error("predictor returned inconsistent score length");
        std::copy(s.begin(), s.end(), out.row(i).begin());
    }
    return out;
}

BinaryMatrix gold_rows(const KnowledgeGraph& graph, std::span<const EntityId> entities, TripleSubset subset) {
    BinaryMatrix out(entities.size(), graph.num_relations());
    std::unordered_map<EntityId, std::size_t> row_of;
    for (std::size_t i = 0; i < entities.size(); ++i) row_of.emplace(entities[i], i);
    for (const auto id : subset) {
        const auto& t = graph.triple(id);
        if (auto it = row_of.find(t.head); it != row_of.end()) out.at(it->second, index(t.relation)) = 1;
    }
    return out;
}

std::vector<EntityId> distinct_heads(const KnowledgeGraph& graph, TripleSubset subset) {
    std::set<EntityId> heads;
    for (const auto id : subset) heads.insert(graph.triple(id).head);
    return {heads.begin(), heads.end()};
}

void write_scores_tsv(std::ostream& out, const KnowledgeGraph& graph, std::span<const EntityId> entities,
                      const ScoreMatrix& scores) {
    const auto old_precision = out.precision(17);
    for (std::size_t i = 0; i < entities.size(); ++i)
        for (std::size_t r = 0; r < scores.cols; ++r)
            out << graph.entity_label(entities[i]) << '\t' << graph.relation_label(relation_at(r)) << '\t'
                << scores.at(i, r) << '\n';
    out.precision(old_precision);
}

void write_selected_tsv(std::ostream& out, const KnowledgeGraph& graph, std::span<const EntityId> entities,
                        const BinaryMatrix& selected) {
    for (std::size_t i = 0; i < entities.size(); ++i)
        for (std::size_t r = 0; r < selected.cols; ++r)
            if (selected.at(i, r))
                out << graph.entity_label(entities[i]) << '\t' << graph.relation_label(relation_at(r)) << '\n';
}

}  // namespace kgic
