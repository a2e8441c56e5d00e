#pragma once
// TransE / RotatE embeddings trained with self-adversarial negative sampling,
// plus filtered tail ranking and Hits@k.
//
// Scores are "higher is more plausible":
//   TransE  score = -|| e_h + w_r - e_t ||_p
//   RotatE  score = -|| e_h o exp(i theta_r) - e_t ||_2
// RotatE entity rows hold dim/2 complex numbers (real parts first, then
// imaginary parts); relation rows hold dim/2 phases.

#include <complex>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "kgic/graph.hpp"
#include "kgic/rng.hpp"

namespace kgic {

enum class KgeModel { transe, rotate };
enum class NegativeMode { tail, head, both };

std::string to_string(KgeModel m);
KgeModel parse_kge_model(std::string_view s);
std::string to_string(NegativeMode m);
NegativeMode parse_negative_mode(std::string_view s);

struct KgeConfig {
    KgeModel model = KgeModel::transe;
    std::size_t dim = 100;
    int norm = 1;                  // TransE only: 1 or 2
    double margin = 5.0;           // gamma
    double adversarial_temperature = 1.0;
    std::size_t negatives = 16;    // per positive
    std::size_t epochs = 100;
    std::size_t batch_size = 256;
    double learning_rate = 0.01;
    std::uint64_t seed = 0;
    NegativeMode negative_mode = NegativeMode::tail;
    bool filter_negatives = false;  // resample corruptions that are train triples

    // gamma = 5 for TransE, 12 for RotatE.
    static KgeConfig defaults(KgeModel model);
    void validate() const;
};

struct EmbeddingTable {
    KgeModel model = KgeModel::transe;
    std::size_t dim = 0;
    int norm = 1;
    std::size_t num_entities = 0;
    std::size_t num_relations = 0;
    std::uint64_t seed = 0;
    std::uint64_t train_fingerprint = 0;
    std::vector<double> entities;   // num_entities x dim
    std::vector<double> relations;  // num_relations x relation_width()

    std::size_t relation_width() const { return model == KgeModel::rotate ? dim / 2 : dim; }
    std::span<double> entity(EntityId e) { return {entities.data() + index(e) * dim, dim}; }
    std::span<const double> entity(EntityId e) const { return {entities.data() + index(e) * dim, dim}; }
    std::span<double> relation(RelationId r) {
        return {relations.data() + index(r) * relation_width(), relation_width()};
    }
    std::span<const double> relation(RelationId r) const {
        return {relations.data() + index(r) * relation_width(), relation_width()};
    }
    // RotatE: exp(i theta_{r,j}).
    std::complex<double> rotation(RelationId r, std::size_t j) const;

    bool operator==(const EmbeddingTable&) const = default;
};

// Entities (and TransE relations) uniform in [-6/sqrt(dim), 6/sqrt(dim)];
// RotatE phases uniform in [-pi, pi]. Throws for odd RotatE dim.
EmbeddingTable init_embeddings(const KgeConfig& config, std::size_t num_entities, std::size_t num_relations);

double score(const EmbeddingTable& table, EntityId h, RelationId r, EntityId t);

// Score of every entity as the tail of (h, r, ?).
std::vector<double> score_tails(const EmbeddingTable& table, EntityId h, RelationId r);

struct NegativeSample {
    std::vector<Triple> triples;
    bool degenerate = false;  // only one entity, corruption equals the original
};

using TripleSet = std::unordered_set<Triple, TripleHash>;

// Replacement entity uniform over all entities. `both` alternates tail/head,
// starting with tail. With `reject`, corruptions found in it are redrawn
// (bounded number of attempts).
NegativeSample sample_negatives(const Triple& triple, std::size_t n, NegativeMode mode, std::size_t num_entities,
                                Rng& rng, const TripleSet* reject = nullptr);
NegativeSample sample_negatives(const Triple& triple, std::size_t n, NegativeMode mode, std::size_t num_entities,
                                std::uint64_t seed, const TripleSet* reject = nullptr);

struct KgeTrainResult {
    EmbeddingTable table;
    std::vector<double> epoch_loss;  // mean per-positive loss
};

// Called after each epoch with (table, epoch index).
using EpochHook = std::function<void(const EmbeddingTable&, std::size_t)>;

// Minimises  -ln s(gamma - d(pos)) - sum_i p_i ln s(d(neg_i) - gamma),
// d = -score, p = softmax(alpha_adv * score(neg)) held constant, by plain SGD
// over shuffled mini-batches. Throws DivergenceError on a non-finite loss.
KgeTrainResult train_kge(const KgeConfig& config, std::size_t num_entities, std::size_t num_relations,
                         std::span<const Triple> train, const EpochHook& hook = {});

// Known tails per (head, relation), used by the filtered protocol.
class TailFilter {
public:
    TailFilter() = default;
    TailFilter(const KnowledgeGraph& graph, TripleSubset subset) { add(graph, subset); }

    void add(const KnowledgeGraph& graph, TripleSubset subset);
    void add(const Triple& t);
    bool contains(EntityId h, RelationId r, EntityId t) const;
    std::span<const EntityId> tails(EntityId h, RelationId r) const;

private:
    std::unordered_map<std::uint64_t, std::vector<EntityId>> tails_;  // sorted
};

// 1-based rank of `gold` among all entities as tail, ordered by score desc
// then handle asc. With `known`, other known tails of (h, r) are removed.
std::size_t rank_tail(const EmbeddingTable& table, EntityId h, RelationId r, EntityId gold,
                      const TailFilter* known);

// Same, from precomputed tail scores.
std::size_t rank_from_scores(std::span<const double> scores, EntityId gold, std::span<const EntityId> filtered);

// Fraction of ranks <= k. Throws on empty input or k == 0.
double hits_at_k(std::span<const std::size_t> ranks, std::size_t k);

// Header (magic, model, dim, norm, counts, seed, train fingerprint) followed
// by row-major little-endian float64 entity then relation rows.
void save_table(std::ostream& out, const EmbeddingTable& table);
EmbeddingTable load_table(std::istream& in);

}  // namespace kgic
