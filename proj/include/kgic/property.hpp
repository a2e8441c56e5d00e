#pragma once
// Stage one: score how relevant each relation is to a head entity, choose a
// decision threshold, and measure the selection with micro P/R/F1.
//
// Scorers:
//   - Recoin: class-weighted property frequency.
//   - Hybrid recommender: item-KNN over binary property rows blended with
//     TF-IDF content similarity.
//   - Linear classifier (classifier.hpp): per-relation logistic outputs over
//     TF-IDF features, trained on the binary cross-entropy below.
//   - Remote (backend.hpp).

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kgic/graph.hpp"

namespace kgic {

// One real per relation, each in [0, 1].
using PropertyScores = std::vector<double>;

struct ScoreMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    ScoreMatrix() = default;
    ScoreMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

// ---- Recoin ----------------------------------------------------------------

struct ClassStats {
    std::vector<std::string> classes;
    std::unordered_map<std::string, std::size_t> class_index;
    std::vector<std::size_t> size;               // entities per class
    std::vector<std::vector<std::size_t>> freq;  // [class][relation]: entities of the class heading it in train
    std::size_t num_relations = 0;
    std::uint64_t train_fingerprint = 0;

    std::size_t freq_of(std::string_view cls, RelationId r) const;
    std::size_t size_of(std::string_view cls) const;
};

// Sizes count every typed entity in the graph; frequencies count only heads of
// `train` triples. An entity with several classes is counted in each.
ClassStats build_class_stats(const KnowledgeGraph& graph, TripleSubset train);

struct RecoinResult {
    PropertyScores scores;
    bool no_classes = false;  // entity is untyped; scores are all zero
};

// score(p) = sum_c freq(p,c) / sum_c size(c) over the entity's classes.
RecoinResult recoin_scores(const KnowledgeGraph& graph, EntityId entity, const ClassStats& stats);

// ---- Item-KNN --------------------------------------------------------------

// Sparse view of a binary property matrix for cosine neighbour search.
class PropertyIndex {
public:
    explicit PropertyIndex(const BinaryMatrix& properties);

    std::size_t num_entities() const { return rows_.size(); }
    std::size_t num_relations() const { return num_relations_; }
    std::span<const std::uint32_t> relations_of(EntityId e) const { return rows_[index(e)]; }
    const BinaryMatrix& matrix() const { return matrix_; }

    // Cosine similarity between `query` (relation list) and every entity with a
    // non-empty row; only positive similarities are returned.
    std::vector<std::pair<EntityId, double>> similar(std::span<const std::uint32_t> query) const;

private:
    BinaryMatrix matrix_;
    std::size_t num_relations_;
    std::vector<std::vector<std::uint32_t>> rows_;
    std::vector<std::vector<std::uint32_t>> postings_;  // relation -> entities
};

// Unweighted mean of the property rows of the k entities most cosine-similar
// to `entity` (itself excluded, ties by handle, only similarity > 0). Uses all
// available neighbours when fewer than k exist.
PropertyScores knn_scores(const PropertyIndex& index, EntityId entity, std::size_t k);
PropertyScores knn_scores(EntityId entity, const BinaryMatrix& properties, std::size_t k);

// ---- TF-IDF content similarity ---------------------------------------------

struct SparseVector {
    std::vector<std::pair<std::uint32_t, double>> entries;  // sorted by term id

    double dot(const SparseVector& other) const;
    bool empty() const { return entries.empty(); }
};

// Lowercased runs of ASCII alphanumerics (bytes >= 0x80 count as word bytes).
std::vector<std::string> tokenize_text(std::string_view text);

// "label types... description" used as the content document of an entity.
std::string entity_document(const KnowledgeGraph& graph, EntityId e, TextMask mask = {});

class TfidfModel {
public:
    // weight(t,d) = tf(t,d) * (ln((1+N)/(1+df(t))) + 1), rows L2-normalised.
    // Throws on an empty corpus.
    explicit TfidfModel(std::span<const std::string> corpus);

    std::size_t num_documents() const { return docs_.size(); }
    std::size_t num_terms() const { return idf_.size(); }
    const SparseVector& document(std::size_t i) const { return docs_.at(i); }
    double idf(std::string_view term) const;
    SparseVector transform(std::string_view text) const;

    // Documents with positive cosine similarity to `query`.
    std::vector<std::pair<std::size_t, double>> similar(const SparseVector& query) const;

private:
    std::unordered_map<std::string, std::uint32_t> vocab_;
    std::vector<double> idf_;
    std::vector<SparseVector> docs_;
    std::vector<std::vector<std::pair<std::uint32_t, double>>> postings_;  // term -> (doc, weight)
};

// Convenience: fits a TfidfModel whose document i is entity i.
TfidfModel tfidf_features(const KnowledgeGraph& graph, TextMask mask = {});

// Similarity-weighted mean (weights normalised to 1) of the property rows of
// the k entities whose documents are most similar to `entity`'s. Neighbours
// are drawn from entities with a non-empty property row.
PropertyScores content_scores(const TfidfModel& tfidf, EntityId entity, const PropertyIndex& properties,
                              std::size_t k);

PropertyScores hybrid_scores(std::span<const double> knn, std::span<const double> content, double alpha);

// ---- Loss, thresholds, metrics ---------------------------------------------

inline constexpr double kBceEpsilon = 1e-7;

// Mean over samples of the summed per-label binary cross-entropy;
// predictions are clipped to [eps, 1-eps]. Throws on shape mismatch.
double bce_loss(const ScoreMatrix& pred, const BinaryMatrix& gold);

// dL/dpred with the same clipping: (p - y) / (p (1 - p)) / N.
ScoreMatrix bce_gradient(const ScoreMatrix& pred, const BinaryMatrix& gold);

std::vector<std::uint8_t> select_properties(std::span<const double> scores, double threshold);
BinaryMatrix select_properties(const ScoreMatrix& scores, double threshold);

struct Prf {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
};

// Micro-averaged over all cells; 0/0 is 0. Throws on shape mismatch.
Prf micro_prf(const BinaryMatrix& pred, const BinaryMatrix& gold);

// {0.05, 0.10, ..., 0.95}
std::vector<double> default_threshold_grid();

// Grid value with the best micro-F1 (ties to the smaller value). When gold
// holds no positives, returns the largest grid value.
double tune_threshold(const ScoreMatrix& scores, const BinaryMatrix& gold, std::span<const double> grid);

// ---- Predictors ------------------------------------------------------------

class PropertyPredictor {
public:
    virtual ~PropertyPredictor() = default;
    virtual PropertyScores scores(EntityId entity) = 0;
    virtual std::string name() const = 0;
    // Fingerprint of the train split the predictor was fitted on.
    virtual std::uint64_t train_fingerprint() const = 0;
};

class RecoinPredictor final : public PropertyPredictor {
public:
    RecoinPredictor(const KnowledgeGraph& graph, TripleSubset train);
    PropertyScores scores(EntityId entity) override;
    std::string name() const override { return "recoin"; }
    std::uint64_t train_fingerprint() const override { return stats_.train_fingerprint; }
    const ClassStats& stats() const { return stats_; }
    std::size_t untyped_queries() const { return untyped_; }

private:
    const KnowledgeGraph& graph_;
    ClassStats stats_;
    std::size_t untyped_ = 0;
};

struct HybridOptions {
    std::size_t k = 10;
    double alpha = 0.5;
    TextMask mask;
};

class HybridPredictor final : public PropertyPredictor {
public:
    HybridPredictor(const KnowledgeGraph& graph, TripleSubset train, HybridOptions options = {});
    PropertyScores scores(EntityId entity) override;
    std::string name() const override { return "hybrid"; }
    std::uint64_t train_fingerprint() const override { return fingerprint_; }

private:
    HybridOptions options_;
    PropertyIndex properties_;
    TfidfModel tfidf_;
    std::uint64_t fingerprint_;
};

// Scores every entity in `entities`, one row each.
ScoreMatrix score_entities(PropertyPredictor& predictor, std::span<const EntityId> entities);

// Gold rows for `entities` drawn from `subset`.
BinaryMatrix gold_rows(const KnowledgeGraph& graph, std::span<const EntityId> entities, TripleSubset subset);

// Distinct heads of `subset`, ascending.
std::vector<EntityId> distinct_heads(const KnowledgeGraph& graph, TripleSubset subset);

// entity<TAB>relation<TAB>score, one line per cell.
void write_scores_tsv(std::ostream& out, const KnowledgeGraph& graph, std::span<const EntityId> entities,
                      const ScoreMatrix& scores);
// entity<TAB>relation for every selected cell.
void write_selected_tsv(std::ostream& out, const KnowledgeGraph& graph, std::span<const EntityId> entities,
                        const BinaryMatrix& selected);

}  // namespace kgic
