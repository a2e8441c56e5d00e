#pragma once
// Generative link prediction: prompt rendering, token scorers, beam search and
// entity-trie constrained decoding.

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kgic/graph.hpp"
#include "kgic/tokenizer.hpp"

namespace kgic {

// ---- Prompts ---------------------------------------------------------------

struct Prompt {
    std::string head;
    std::vector<std::string> types;  // empty when masked
    std::string description;         // empty when masked
    std::string relation;
    std::string text;
};

// "head: h, types: c1, c2, description: d, relation: r, tail:". Masked or
// empty fields are dropped together with their key. Throws on an empty head or
// relation label.
Prompt build_prompt(std::string_view head, const EntityMeta& meta, std::string_view relation, TextMask mask = {});
Prompt build_prompt(const KnowledgeGraph& graph, EntityId head, RelationId relation, TextMask mask = {});

// Same rendering without the relation and tail parts.
std::string render_entity_text(std::string_view head, const EntityMeta& meta, TextMask mask = {});
std::string render_entity_text(const KnowledgeGraph& graph, EntityId head, TextMask mask = {});

// ---- Token scorers ---------------------------------------------------------

inline constexpr double kNormTolerance = 1e-6;

class TokenScorer {
public:
    virtual ~TokenScorer() = default;
    virtual const Tokenizer& tokenizer() const = 0;
    // Log-probabilities of the next token, one per vocabulary entry.
    virtual std::vector<double> next_log_probs(std::string_view prompt, std::span<const TokenId> prefix) = 0;
    // Whether next_log_probs may be called from several threads at once.
    virtual bool concurrent() const { return false; }
    // Allowed deviation of log-sum-exp from 0.
    virtual double tolerance() const { return kNormTolerance; }
};

double log_sum_exp(std::span<const double> values);

// Throws unless `log_probs` has `vocab_size` entries, none NaN or +inf, and
// log-sum-exp within `tolerance` of 0. -inf (probability zero) is allowed.
void check_normalized(std::span<const double> log_probs, std::size_t vocab_size, double tolerance = kNormTolerance);

// Fixed conditional distributions keyed by generated prefix, optionally also
// by prompt. Unlisted contexts get the uniform distribution.
class MockScorer final : public TokenScorer {
public:
    struct Entry {
        std::optional<std::string> prompt;  // nullopt matches any prompt
        std::vector<TokenId> prefix;
        std::vector<double> log_probs;
    };

    // Throws if any entry is not normalized to within kNormTolerance.
    MockScorer(Tokenizer tokenizer, std::vector<Entry> entries);

    const Tokenizer& tokenizer() const override { return tokenizer_; }
    std::vector<double> next_log_probs(std::string_view prompt, std::span<const TokenId> prefix) override;
    bool concurrent() const override { return true; }

private:
    Tokenizer tokenizer_;
    std::map<std::pair<std::string, std::vector<TokenId>>, std::vector<double>> by_prompt_;
    std::map<std::vector<TokenId>, std::vector<double>> by_prefix_;
};

std::unique_ptr<MockScorer> mock_scorer(Tokenizer tokenizer, std::vector<MockScorer::Entry> entries);

// ---- Beam search -----------------------------------------------------------

struct Hypothesis {
    std::vector<TokenId> tokens;  // includes the trailing END when finished
    double log_prob = 0;
    bool finished = false;
    std::vector<EntityId> entities;  // constrained search: entities at the terminal
};

struct BeamOptions {
    std::size_t beam_width = 10;
    std::size_t max_len = 32;  // counts END
    // Non-END tokens required before END may be emitted.
    std::size_t min_len = 1;
    // Rank finished hypotheses by log_prob / length instead of log_prob.
    bool length_normalize = false;
};

// Expands every live hypothesis by every token. END extensions go to the
// finished pool; the best beam_width others stay live (ties broken by
// lexicographic token order). Stops once the pool holds beam_width entries or
// max_len is reached, when live hypotheses are returned unfinished. Output:
// finished first, then unfinished, each by score desc, at most beam_width.
std::vector<Hypothesis> beam_search(TokenScorer& scorer, std::string_view prompt, const BeamOptions& options);

// Decoded surface forms mapped to graph entities; strings matching no entity
// are dropped, as are repeats.
struct RankedEntity {
    EntityId entity;
    double log_prob;

    bool operator==(const RankedEntity&) const = default;
};

std::vector<RankedEntity> decode_entities(const KnowledgeGraph& graph, const Tokenizer& tokenizer,
                                          std::span<const Hypothesis> hypotheses);

// ---- Entity trie -----------------------------------------------------------

class NameTrie {
public:
    struct Node {
        std::map<TokenId, std::uint32_t> children;
        std::vector<EntityId> entities;  // non-empty iff terminal
    };

    static constexpr std::uint32_t kRoot = 0;

    NameTrie();
    // Throws if `label` does not round-trip through `tokenizer` or is empty.
    void insert(std::string_view label, EntityId entity, const Tokenizer& tokenizer);

    const Node& node(std::uint32_t i) const { return nodes_.at(i); }
    std::size_t num_nodes() const { return nodes_.size(); }
    std::size_t num_terminals() const { return terminals_; }
    bool empty() const { return terminals_ == 0; }
    // Node reached by `tokens`, if any.
    std::optional<std::uint32_t> walk(std::span<const TokenId> tokens) const;

private:
    std::vector<Node> nodes_;
    std::size_t terminals_ = 0;
};

NameTrie build_trie(std::span<const std::pair<std::string, EntityId>> labels, const Tokenizer& tokenizer);
// Every entity of the graph.
NameTrie build_trie(const KnowledgeGraph& graph, const Tokenizer& tokenizer);

// Beam search restricted to trie paths. Scorer log-probs are renormalized over
// the allowed tokens (children, plus END at terminal nodes). Only terminal
// paths are returned, so each output names graph entities. Throws on an empty
// trie.
std::vector<Hypothesis> constrained_beam_search(TokenScorer& scorer, const NameTrie& trie, std::string_view prompt,
                                                const BeamOptions& options);

// Entities of the constrained hypotheses, best first. Duplicate-label
// entities share their hypothesis score, in handle order.
std::vector<RankedEntity> constrained_decode(TokenScorer& scorer, const NameTrie& trie, std::string_view prompt,
                                             const BeamOptions& options);

// ---- Likelihood ------------------------------------------------------------

struct SequenceNll {
    double total = 0;
    double per_token = 0;
};

// -sum_t log P(y_t | y_<t, prompt). Throws if `target` is empty, does not end
// in END, or holds ids outside the vocabulary.
SequenceNll sequence_nll(TokenScorer& scorer, std::string_view prompt, std::span<const TokenId> target);

// ---- Local generative scorer -----------------------------------------------

// Count-based tail model over a trie of entity names: the next-token weight
// is the number of train tails of the prompt's relation below that branch,
// plus `smoothing` per entity, mixed with `uniform_mix` of the uniform
// distribution. The relation is read from the rendered prompt.
class TailPriorScorer final : public TokenScorer {
public:
    TailPriorScorer(const KnowledgeGraph& graph, TripleSubset train, Tokenizer tokenizer, double smoothing = 0.1,
                    double uniform_mix = 1e-3);

    const Tokenizer& tokenizer() const override { return tokenizer_; }
    std::vector<double> next_log_probs(std::string_view prompt, std::span<const TokenId> prefix) override;
    bool concurrent() const override { return true; }

private:
    double weight(std::uint32_t node, std::optional<RelationId> r, bool terminal_only) const;

    const KnowledgeGraph& graph_;
    Tokenizer tokenizer_;
    NameTrie trie_;
    double smoothing_;
    double uniform_mix_;
    std::vector<double> subtree_entities_;
    // (relation, node) -> train tail count below (or at) the node
    std::unordered_map<std::uint64_t, double> subtree_counts_;
    std::unordered_map<std::uint64_t, double> terminal_counts_;
};

// Relation label of a rendered prompt, if it has one.
std::optional<std::string> prompt_relation(std::string_view prompt);

}  // namespace kgic
