#pragma once
// Instance completion: stage-one (head, relation) candidates, stage-two tail
// prediction, and the IC metrics.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kgic/backend.hpp"
#include "kgic/classifier.hpp"
#include "kgic/genlp.hpp"
#include "kgic/graph.hpp"
#include "kgic/ingest.hpp"
#include "kgic/kge.hpp"
#include "kgic/property.hpp"

namespace kgic {

// ---- Candidates and pair metrics -------------------------------------------

struct CandidatePair {
    EntityId head;
    RelationId relation;
    double score = 0;

    bool operator==(const CandidatePair&) const = default;
};

// One pair per relation scoring >= threshold, heads in the given order and
// relations ascending. A predictor failure is rethrown naming the head.
std::vector<CandidatePair> generate_candidates(const KnowledgeGraph& graph, PropertyPredictor& predictor,
                                               std::span<const EntityId> heads, double threshold);

// |distinct predicted pairs that occur in gold| / |distinct predicted pairs|,
// 0 when nothing was predicted (`empty` is then set).
double pair_precision(std::span<const CandidatePair> pairs, std::span<const Triple> gold, bool* empty = nullptr);

// Fraction of gold triples whose (head, relation) was predicted; 0 for empty gold.
double coverage(std::span<const CandidatePair> pairs, std::span<const Triple> gold);

// ---- Link predictors -------------------------------------------------------

struct ScoredTail {
    EntityId entity;
    double score;

    bool operator==(const ScoredTail&) const = default;
};

class LinkPredictor {
public:
    virtual ~LinkPredictor() = default;
    // Best tails for (h, r, ?), score desc, at most k.
    virtual std::vector<ScoredTail> predict(EntityId head, RelationId relation, std::size_t k) = 0;
    virtual std::string name() const = 0;
    virtual std::uint64_t train_fingerprint() const = 0;
    virtual bool concurrent() const { return false; }
};

// Ranks every entity by the embedding score (ties by handle). Tails in
// `exclude` (typically the train triples) are skipped.
class KgeLinkPredictor final : public LinkPredictor {
public:
    KgeLinkPredictor(const EmbeddingTable& table, std::optional<TailFilter> exclude = std::nullopt);

    std::vector<ScoredTail> predict(EntityId head, RelationId relation, std::size_t k) override;
    std::string name() const override { return to_string(table_.model); }
    std::uint64_t train_fingerprint() const override { return table_.train_fingerprint; }
    bool concurrent() const override { return true; }

private:
    const EmbeddingTable& table_;
    std::optional<TailFilter> exclude_;
};

// Trie-constrained beam decoding of the rendered prompt; tails are scored by
// their sequence log-probability.
class GenerativeLinkPredictor final : public LinkPredictor {
public:
    GenerativeLinkPredictor(const KnowledgeGraph& graph, TokenScorer& scorer, std::uint64_t train_fingerprint,
                            BeamOptions beam = {}, TextMask mask = {},
                            std::optional<TailFilter> exclude = std::nullopt, std::string name = "generative");

    std::vector<ScoredTail> predict(EntityId head, RelationId relation, std::size_t k) override;
    std::string name() const override { return name_; }
    std::uint64_t train_fingerprint() const override { return fingerprint_; }
    bool concurrent() const override { return scorer_.concurrent(); }
    const NameTrie& trie() const { return trie_; }

private:
    const KnowledgeGraph& graph_;
    TokenScorer& scorer_;
    NameTrie trie_;
    std::uint64_t fingerprint_;
    BeamOptions beam_;
    TextMask mask_;
    std::optional<TailFilter> exclude_;
    std::string name_;
};

// ---- Completion and evaluation ---------------------------------------------

struct InstancePrediction {
    CandidatePair pair;
    std::vector<ScoredTail> tails;  // score desc, at most k_max
    std::string error;              // non-empty when the predictor failed
};

struct CompleteOptions {
    std::size_t k_max = 10;
    std::size_t jobs = 1;  // ignored for predictors that are not concurrent
};

// Output order follows `pairs` whatever the number of jobs.
std::vector<InstancePrediction> complete(LinkPredictor& predictor, std::span<const CandidatePair> pairs,
                                         const CompleteOptions& options = {});

// Thrown when stage fingerprints disagree with the split.
class LeakageError : public Error {
public:
    using Error::Error;
};

struct IcCounts {
    std::size_t gold_triples = 0;
    std::size_t gold_pairs = 0;
    std::size_t covered_triples = 0;
    std::size_t predicted_pairs = 0;
    std::size_t correct_pairs = 0;
    std::size_t failed_pairs = 0;

    bool operator==(const IcCounts&) const = default;
};

using ConfigEcho = std::vector<std::pair<std::string, std::string>>;

struct EvalReport {
    std::vector<std::size_t> ks;
    std::vector<double> hits_overall;      // per k
    std::vector<double> hits_conditional;  // per k
    double pair_precision = 0;
    double coverage = 0;
    IcCounts counts;
    std::uint64_t split_fingerprint = 0;
    ConfigEcho config;
    std::vector<std::string> warnings;

    bool operator==(const EvalReport&) const = default;
};

struct EvalIcOptions {
    std::vector<std::size_t> ks{1, 5, 10};
    std::uint64_t split_fingerprint = 0;
    std::uint64_t stage_one_fingerprint = 0;
    std::uint64_t stage_two_fingerprint = 0;
    ConfigEcho config;
};

// Overall Hits@k counts every gold triple, uncovered ones as misses;
// conditional Hits@k only the covered ones. Throws on empty gold and
// LeakageError when a stage was trained on another split.
EvalReport eval_ic(std::span<const InstancePrediction> predictions, std::span<const Triple> gold,
                   const EvalIcOptions& options);

// Metric definitions printed with every IC report.
const std::vector<std::string>& ic_definitions();

// ---- Full runs -------------------------------------------------------------

enum class StageOneMethod { recoin, hybrid, linear, remote };
enum class StageTwoMethod { transe, rotate, generative_local, generative_remote };

std::string to_string(StageOneMethod m);
std::string to_string(StageTwoMethod m);
StageOneMethod parse_stage_one(std::string_view s);
StageTwoMethod parse_stage_two(std::string_view s);

struct RunConfig {
    std::uint64_t seed = 0;
    SplitRatios ratios;
    StageOneMethod stage_one = StageOneMethod::recoin;
    std::optional<double> threshold;  // tuned on valid when unset
    HybridOptions hybrid;
    LinearTrainOptions linear;
    StageTwoMethod stage_two = StageTwoMethod::transe;
    KgeConfig kge;
    BeamOptions beam;
    std::size_t k_max = 10;
    bool exclude_known = true;  // drop train tails from stage-two lists
    BackendConfig backend;
    // Train split the remote models were fitted on; defaults to the local one.
    std::optional<std::uint64_t> remote_fingerprint;
    TextMask mask;
    std::size_t jobs = 1;

    ConfigEcho echo() const;
};

struct IcRun {
    double threshold = 0;
    Prf stage_one_test;  // property selection on test heads vs their test rows
    std::vector<CandidatePair> candidates;
    std::vector<InstancePrediction> predictions;
    EvalReport report;
};

// Stage-one predictor for `config` fitted on split.train.
std::unique_ptr<PropertyPredictor> make_property_predictor(const KnowledgeGraph& graph, const SplitSet& split,
                                                           const RunConfig& config);

// Tunes on the distinct valid heads against their valid property rows.
double tune_stage_one(const KnowledgeGraph& graph, const SplitSet& split, PropertyPredictor& predictor);

// Gold triples of a subset.
std::vector<Triple> subset_triples(const KnowledgeGraph& graph, TripleSubset subset);

// Trained state shared by the two stages of one run. Owns whatever the link
// predictor refers to.
struct StageTwo {
    std::unique_ptr<EmbeddingTable> table;  // heap-held so predictors survive moves
    std::unique_ptr<TokenScorer> scorer;
    std::unique_ptr<LinkPredictor> predictor;
};

StageTwo make_link_predictor(const KnowledgeGraph& graph, const SplitSet& split, const RunConfig& config);

// Stage one, candidates on test heads, stage two and evaluation. `stage_two`
// may carry an already trained model to reuse (ablations).
IcRun run_ic(const KnowledgeGraph& graph, const SplitSet& split, const RunConfig& config,
             StageTwo* stage_two = nullptr);

struct AblationRow {
    TextMask mask;
    std::string label;  // "full", "w/o types", ...
    IcRun run;
};

// The four mask combinations, in order {}, {types}, {description}, both.
std::vector<TextMask> all_masks();
std::string mask_label(TextMask mask);

// Runs run_ic once per mask. The threshold is tuned once with the first mask
// and shared; splits, seeds and the KGE model are shared.
std::vector<AblationRow> ablate(const KnowledgeGraph& graph, const SplitSet& split, const RunConfig& config,
                                std::span<const TextMask> masks);

}  // namespace kgic
