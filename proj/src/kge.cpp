#include "kgic/kge.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"
#include "kgic/error.hpp"

namespace kgic {

std::string to_string(KgeModel m) { return m == KgeModel::transe ? "transe" : "rotate"; }

KgeModel parse_kge_model(std::string_view s) {
    if (s == "transe") return KgeModel::transe;
    if (s == "rotate") return KgeModel::rotate;
    throw Error("unknown KGE model '" + std::string(s) + "'");
}

std::string to_string(NegativeMode m) {
    switch (m) {
        case NegativeMode::tail: return "tail";
        case NegativeMode::head: return "head";
        case NegativeMode::both: return "both";
    }
    return "?";
}

NegativeMode parse_negative_mode(std::string_view s) {
    if (s == "tail") return NegativeMode::tail;
    if (s == "head") return NegativeMode::head;
    if (s == "both") return NegativeMode::both;
    throw Error("unknown negative sampling mode '" + std::string(s) + "'");
}

KgeConfig KgeConfig::defaults(KgeModel model) {
    KgeConfig c;
    c.model = model;
    c.margin = model == KgeModel::rotate ? 12.0 : 5.0;
    return c;
}

void KgeConfig::validate() const {
    if (dim == 0) throw Error("kge: dim must be positive");
    if (model == KgeModel::rotate && dim % 2 != 0) throw Error("kge: RotatE needs an even dim, got " + std::to_string(dim));
    if (model == KgeModel::transe && norm != 1 && norm != 2) throw Error("kge: TransE norm must be 1 or 2");
    if (!(margin > 0)) throw Error("kge: margin must be positive");
    if (!(adversarial_temperature >= 0)) throw Error("kge: adversarial temperature must be >= 0");
    if (negatives == 0) throw Error("kge: negatives must be positive");
    if (batch_size == 0) throw Error("kge: batch size must be positive");
    if (!(learning_rate > 0)) throw Error("kge: learning rate must be positive");
}

std::complex<double> EmbeddingTable::rotation(RelationId r, std::size_t j) const {
    const double theta = relation(r)[j];
    return {std::cos(theta), std::sin(theta)};
}

EmbeddingTable init_embeddings(const KgeConfig& config, std::size_t num_entities, std::size_t num_relations) {
    config.validate();
    EmbeddingTable t;
    t.model = config.model;
    t.dim = config.dim;
    t.norm = config.model == KgeModel::transe ? config.norm : 2;
    t.num_entities = num_entities;
    t.num_relations = num_relations;
    t.seed = config.seed;
    t.entities.resize(num_entities * t.dim);
    t.relations.resize(num_relations * t.relation_width());
    Rng rng(config.seed);
    const double bound = 6.0 / std::sqrt(static_cast<double>(config.dim));
    for (auto& v : t.entities) v = rng.uniform(-bound, bound);
    for (auto& v : t.relations)
        v = config.model == KgeModel::rotate ? rng.uniform(-std::numbers::pi, std::numbers::pi)
                                             : rng.uniform(-bound, bound);
    return t;
}

namespace {

// e_h + w_r (TransE) or e_h o exp(i theta_r) (RotatE): the point the tail is
// compared against.
void query_point(const EmbeddingTable& table, EntityId h, RelationId r, std::span<double> out) {
    const auto eh = table.entity(h);
    const auto wr = table.relation(r);
    if (table.model == KgeModel::transe) {
        for (std::size_t j = 0; j < table.dim; ++j) out[j] = eh[j] + wr[j];
        return;
    }
    const auto half = table.dim / 2;
    for (std::size_t j = 0; j < half; ++j) {
        const double c = std::cos(wr[j]);
        const double s = std::sin(wr[j]);
        out[j] = eh[j] * c - eh[half + j] * s;
        out[half + j] = eh[j] * s + eh[half + j] * c;
    }
}

double distance_to(const EmbeddingTable& table, std::span<const double> query, EntityId t) {
    const auto et = table.entity(t);
    double d = 0;
    if (table.norm == 1) {
        for (std::size_t j = 0; j < table.dim; ++j) d += std::abs(query[j] - et[j]);
        return d;
    }
    for (std::size_t j = 0; j < table.dim; ++j) {
        const double v = query[j] - et[j];
        d += v * v;
    }
    return std::sqrt(d);
}

}  // namespace

double score(const EmbeddingTable& table, EntityId h, RelationId r, EntityId t) {
    std::vector<double> q(table.dim);
    query_point(table, h, r, q);
    return -distance_to(table, q, t);
}

std::vector<double> score_tails(const EmbeddingTable& table, EntityId h, RelationId r) {
    std::vector<double> q(table.dim);
    query_point(table, h, r, q);
    std::vector<double> out(table.num_entities);
    for (std::size_t e = 0; e < table.num_entities; ++e) out[e] = -distance_to(table, q, entity_at(e));
    return out;
}

NegativeSample sample_negatives(const Triple& triple, std::size_t n, NegativeMode mode, std::size_t num_entities,
                                Rng& rng, const TripleSet* reject) {
    NegativeSample out;
    out.triples.reserve(n);
    out.degenerate = num_entities <= 1;
    constexpr int kMaxAttempts = 32;
    for (std::size_t i = 0; i < n; ++i) {
        const bool corrupt_tail = mode == NegativeMode::tail || (mode == NegativeMode::both && i % 2 == 0);
        Triple neg = triple;
        for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
            const auto e = entity_at(static_cast<std::size_t>(rng.below(std::max<std::size_t>(num_entities, 1))));
            neg = triple;
            (corrupt_tail ? neg.tail : neg.head) = e;
            if (!reject || out.degenerate || !reject->contains(neg)) break;
        }
        out.triples.push_back(neg);
    }
    return out;
}

NegativeSample sample_negatives(const Triple& triple, std::size_t n, NegativeMode mode, std::size_t num_entities,
                                std::uint64_t seed, const TripleSet* reject) {
    Rng rng(seed);
    return sample_negatives(triple, n, mode, num_entities, rng, reject);
}

namespace {

double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// Dense gradient buffers with a touched-row list so each step only visits
// rows that received gradient.
class SparseGrad {
public:
    SparseGrad(std::size_t rows, std::size_t width) : width_(width), data_(rows * width, 0.0), touched_(rows, 0) {}

    std::span<double> row(std::size_t i) {
        if (!touched_[i]) {
            touched_[i] = 1;
            rows_.push_back(i);
        }
        return {data_.data() + i * width_, width_};
    }

    void apply(std::vector<double>& params, double step) {
        for (const auto i : rows_) {
            double* p = params.data() + i * width_;
            double* g = data_.data() + i * width_;
            for (std::size_t j = 0; j < width_; ++j) {
                p[j] -= step * g[j];
                g[j] = 0.0;
            }
            touched_[i] = 0;
        }
        rows_.clear();
    }

private:
    std::size_t width_;
    std::vector<double> data_;
    std::vector<std::uint8_t> touched_;
    std::vector<std::size_t> rows_;
};

// Distance d(h,r,t) = -score; when coef != 0 also accumulates coef * dd/dparam.
double distance_with_grad(const EmbeddingTable& table, const Triple& tr, double coef, SparseGrad& ge,
                          SparseGrad& gr, std::vector<double>& scratch) {
    const auto dim = table.dim;
    scratch.resize(dim);
    auto q = std::span<double>(scratch);
    query_point(table, tr.head, tr.relation, q);
    const auto et = table.entity(tr.tail);
    for (std::size_t j = 0; j < dim; ++j) q[j] -= et[j];  // q is now the residual v
    double d = 0;
    if (table.norm == 1) {
        for (const double v : q) d += std::abs(v);
    } else {
        for (const double v : q) d += v * v;
        d = std::sqrt(d);
    }
    if (coef == 0.0) return d;

    // dd/dv
    if (table.norm == 1) {
        for (auto& v : q) v = coef * static_cast<double>((v > 0) - (v < 0));
    } else {
        const double inv = d > 0 ? coef / d : 0.0;
        for (auto& v : q) v *= inv;
    }
    auto gh = ge.row(index(tr.head));
    auto gt = ge.row(index(tr.tail));
    auto grel = gr.row(index(tr.relation));
    if (table.model == KgeModel::transe) {
        for (std::size_t j = 0; j < dim; ++j) {
            gh[j] += q[j];
            grel[j] += q[j];
            gt[j] -= q[j];
        }
        return d;
    }
    const auto half = dim / 2;
    const auto eh = table.entity(tr.head);
    const auto theta = table.relation(tr.relation);
    for (std::size_t j = 0; j < half; ++j) {
        const double c = std::cos(theta[j]);
        const double s = std::sin(theta[j]);
        const double gre = q[j];
        const double gim = q[half + j];
        const double hr = eh[j];
        const double hi = eh[half + j];
        // v_re = hr c - hi s - t_re,  v_im = hr s + hi c - t_im
        gh[j] += gre * c + gim * s;
        gh[half + j] += -gre * s + gim * c;
        grel[j] += gre * (-hr * s - hi * c) + gim * (hr * c - hi * s);
        gt[j] -= gre;
        gt[half + j] -= gim;
    }
    return d;
}

}  // namespace

KgeTrainResult train_kge(const KgeConfig& config, std::size_t num_entities, std::size_t num_relations,
                         std::span<const Triple> train, const EpochHook& hook) {
    config.validate();
    if (train.empty()) throw Error("train_kge: empty train set");
    KgeTrainResult result{init_embeddings(config, num_entities, num_relations), {}};
    auto& table = result.table;

    TripleSet train_set;
    if (config.filter_negatives) train_set.insert(train.begin(), train.end());
    const TripleSet* reject = config.filter_negatives ? &train_set : nullptr;

    // Separate streams so the sampling sequence does not depend on init size.
    Rng rng(config.seed ^ 0x5DEECE66DULL);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    SparseGrad ge(num_entities, table.dim);
    SparseGrad gr(num_relations, table.relation_width());
    std::vector<double> scratch;
    std::vector<double> neg_dist(config.negatives);
    std::vector<double> weights(config.negatives);
    const double gamma = config.margin;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        double epoch_loss = 0;
        std::size_t batch_no = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_no) {
            const auto end = std::min(order.size(), start + config.batch_size);
            const double step = config.learning_rate / static_cast<double>(end - start);
            for (std::size_t b = start; b < end; ++b) {
                const auto& pos = train[order[b]];
                const auto negs = sample_negatives(pos, config.negatives, config.negative_mode, num_entities, rng, reject);

                const double d_pos = distance_with_grad(table, pos, 0.0, ge, gr, scratch);
                for (std::size_t i = 0; i < negs.triples.size(); ++i)
                    neg_dist[i] = distance_with_grad(table, negs.triples[i], 0.0, ge, gr, scratch);

                // Self-adversarial weights: softmax of alpha * score, no gradient.
                double wmax = -INFINITY;
                for (std::size_t i = 0; i < neg_dist.size(); ++i) {
                    weights[i] = -config.adversarial_temperature * neg_dist[i];
                    wmax = std::max(wmax, weights[i]);
                }
                double wsum = 0;
                for (auto& w : weights) wsum += (w = std::exp(w - wmax));
                for (auto& w : weights) w /= wsum;

                double loss = -log_sigmoid(gamma - d_pos);
                for (std::size_t i = 0; i < neg_dist.size(); ++i) loss -= weights[i] * log_sigmoid(neg_dist[i] - gamma);
                if (!std::isfinite(loss)) {
                    std::ostringstream msg;
                    msg << "KGE training diverged at epoch " << epoch << ", batch " << batch_no << " (loss " << loss
                        << ", lr " << config.learning_rate << ")";
                    throw DivergenceError(msg.str());
                }
                epoch_loss += loss;
                if (config.learning_rate == 0.0) continue;

                distance_with_grad(table, pos, sigmoid(d_pos - gamma), ge, gr, scratch);
                for (std::size_t i = 0; i < negs.triples.size(); ++i)
                    distance_with_grad(table, negs.triples[i], -weights[i] * sigmoid(gamma - neg_dist[i]), ge, gr,
                                       scratch);
            }
            ge.apply(table.entities, step);
            gr.apply(table.relations, step);
        }
        result.epoch_loss.push_back(epoch_loss / static_cast<double>(train.size()));
        if (hook) hook(table, epoch);
    }
    return result;
}

void TailFilter::add(const KnowledgeGraph& graph, TripleSubset subset) {
    for (const auto id : subset) add(graph.triple(id));
}

void TailFilter::add(const Triple& t) {
    auto& tails = tails_[pair_key(t.head, t.relation)];
    auto it = std::lower_bound(tails.begin(), tails.end(), t.tail);
    if (it == tails.end() || *it != t.tail) tails.insert(it, t.tail);
}

bool TailFilter::contains(EntityId h, RelationId r, EntityId t) const {
    const auto tails = this->tails(h, r);
    return std::binary_search(tails.begin(), tails.end(), t);
}

std::span<const EntityId> TailFilter::tails(EntityId h, RelationId r) const {
    auto it = tails_.find(pair_key(h, r));
    if (it == tails_.end()) return {};
    return it->second;
}

std::size_t rank_from_scores(std::span<const double> scores, EntityId gold, std::span<const EntityId> filtered) {
    const double g = scores[index(gold)];
    std::size_t rank = 1;
    auto f = filtered.begin();
    for (std::size_t e = 0; e < scores.size(); ++e) {
        while (f != filtered.end() && index(*f) < e) ++f;
        if (e == index(gold)) continue;
        if (f != filtered.end() && index(*f) == e) continue;
        if (scores[e] > g || (scores[e] == g && e < index(gold))) ++rank;
    }
    return rank;
}

std::size_t rank_tail(const EmbeddingTable& table, EntityId h, RelationId r, EntityId gold, const TailFilter* known) {
    const auto scores = score_tails(table, h, r);
    return rank_from_scores(scores, gold, known ? known->tails(h, r) : std::span<const EntityId>{});
}

double hits_at_k(std::span<const std::size_t> ranks, std::size_t k) {
    if (ranks.empty()) throw Error("hits_at_k: no ranks");
    if (k == 0) throw Error("hits_at_k: k must be >= 1");
    const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r <= k; });
    return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

namespace {
constexpr char kTableMagic[9] = "KGICEMB1";
}

void save_table(std::ostream& out, const EmbeddingTable& table) {
    io::write_magic(out, kTableMagic);
    io::write_le<std::uint32_t>(out, table.model == KgeModel::transe ? 0 : 1);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(table.dim));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(table.norm));
    io::write_le<std::uint64_t>(out, table.num_entities);
    io::write_le<std::uint64_t>(out, table.num_relations);
    io::write_le<std::uint64_t>(out, table.seed);
    io::write_le<std::uint64_t>(out, table.train_fingerprint);
    for (const double v : table.entities) io::write_le<double>(out, v);
    for (const double v : table.relations) io::write_le<double>(out, v);
    if (!out) throw Error("failed to write embedding table");
}

EmbeddingTable load_table(std::istream& in) {
    io::expect_magic(in, kTableMagic);
    EmbeddingTable t;
    const auto model = io::read_le<std::uint32_t>(in);
    if (model > 1) throw Error("embedding table: unknown model code " + std::to_string(model));
    t.model = model == 0 ? KgeModel::transe : KgeModel::rotate;
    t.dim = io::read_le<std::uint32_t>(in);
    t.norm = static_cast<int>(io::read_le<std::uint32_t>(in));
    t.num_entities = io::read_le<std::uint64_t>(in);
    t.num_relations = io::read_le<std::uint64_t>(in);
    t.seed = io::read_le<std::uint64_t>(in);
    t.train_fingerprint = io::read_le<std::uint64_t>(in);
    t.entities.resize(t.num_entities * t.dim);
    t.relations.resize(t.num_relations * t.relation_width());
    for (auto& v : t.entities) v = io::read_le<double>(in);
    for (auto& v : t.relations) v = io::read_le<double>(in);
    return t;
}

}  // namespace kgic
