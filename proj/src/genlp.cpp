#include "kgic/genlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "kgic/error.hpp"
#include "strings.hpp"

namespace kgic {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<std::string> render_parts(std::string_view head, const EntityMeta& meta, TextMask mask) {
    if (head.empty()) throw Error("prompt: empty head label");
    std::vector<std::string> parts{"head: " + std::string(head)};
    if (!mask.types) {
        std::vector<std::string> types;
        for (const auto& t : meta.types)
            if (!t.empty()) types.push_back(t);
        if (!types.empty()) parts.push_back("types: " + str::join(types, ", "));
    }
    if (!mask.description && !meta.description.empty()) parts.push_back("description: " + meta.description);
    return parts;
}

double rank_score(const Hypothesis& h, bool length_normalize) {
    if (!length_normalize || h.tokens.empty()) return h.log_prob;
    return h.log_prob / static_cast<double>(h.tokens.size());
}

// Score desc, then token sequence ascending.
void sort_hypotheses(std::vector<Hypothesis>& hyps, bool length_normalize) {
    std::stable_sort(hyps.begin(), hyps.end(), [&](const Hypothesis& a, const Hypothesis& b) {
        const double sa = rank_score(a, length_normalize);
        const double sb = rank_score(b, length_normalize);
        if (sa != sb) return sa > sb;
        return a.tokens < b.tokens;
    });
}

void check_beam_options(const BeamOptions& options) {
    if (options.beam_width == 0) throw Error("beam search: beam width must be >= 1");
    if (options.max_len == 0) throw Error("beam search: max length must be >= 1");
}

struct Live {
    Hypothesis hyp;
    std::uint32_t node = NameTrie::kRoot;
};

std::vector<Hypothesis> assemble(std::vector<Hypothesis> finished, std::vector<Hypothesis> unfinished,
                                 const BeamOptions& options) {
    sort_hypotheses(finished, options.length_normalize);
    sort_hypotheses(unfinished, options.length_normalize);
    for (auto& h : unfinished) finished.push_back(std::move(h));
    if (finished.size() > options.beam_width) finished.resize(options.beam_width);
    return finished;
}

}  // namespace

// ---- Prompts ---------------------------------------------------------------

Prompt build_prompt(std::string_view head, const EntityMeta& meta, std::string_view relation, TextMask mask) {
    if (relation.empty()) throw Error("prompt: empty relation label");
    auto parts = render_parts(head, meta, mask);
    parts.push_back("relation: " + std::string(relation));
    parts.emplace_back("tail:");

    Prompt p;
    p.head = std::string(head);
    if (!mask.types) p.types = meta.types;
    if (!mask.description) p.description = meta.description;
    p.relation = std::string(relation);
    p.text = str::join(parts, ", ");
    return p;
}

Prompt build_prompt(const KnowledgeGraph& graph, EntityId head, RelationId relation, TextMask mask) {
    return build_prompt(graph.entity_label(head), graph.meta(head), graph.relation_label(relation), mask);
}

std::string render_entity_text(std::string_view head, const EntityMeta& meta, TextMask mask) {
    return str::join(render_parts(head, meta, mask), ", ");
}

std::string render_entity_text(const KnowledgeGraph& graph, EntityId head, TextMask mask) {
    return render_entity_text(graph.entity_label(head), graph.meta(head), mask);
}

std::optional<std::string> prompt_relation(std::string_view prompt) {
    constexpr std::string_view key = "relation: ";
    constexpr std::string_view tail = ", tail:";
    if (prompt.size() < tail.size() || prompt.substr(prompt.size() - tail.size()) != tail) return std::nullopt;
    prompt.remove_suffix(tail.size());
    const auto pos = prompt.rfind(key);
    if (pos == std::string_view::npos) return std::nullopt;
    if (pos != 0 && prompt.substr(0, pos).ends_with(", ") == false) return std::nullopt;
    return std::string(prompt.substr(pos + key.size()));
}

// ---- Scorers ---------------------------------------------------------------

double log_sum_exp(std::span<const double> values) {
    double m = kNegInf;
    for (const double v : values) m = std::max(m, v);
    if (m == kNegInf) return kNegInf;
    double s = 0;
    for (const double v : values) s += std::exp(v - m);
    return m + std::log(s);
}

void check_normalized(std::span<const double> log_probs, std::size_t vocab_size, double tolerance) {
    if (log_probs.size() != vocab_size)
        throw Error("token scorer returned " + std::to_string(log_probs.size()) + " log-probs for a vocabulary of " +
                    std::to_string(vocab_size));
    for (const double v : log_probs)
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
            throw Error("token scorer returned a non-finite log-prob");
    const double lse = log_sum_exp(log_probs);
    if (!(std::abs(lse) <= tolerance))
        throw Error("token scorer returned an unnormalized distribution (log-sum-exp " + std::to_string(lse) + ")");
}

MockScorer::MockScorer(Tokenizer tokenizer, std::vector<Entry> entries) : tokenizer_(std::move(tokenizer)) {
    for (auto& e : entries) {
        check_normalized(e.log_probs, tokenizer_.size());
        for (const auto t : e.prefix)
            if (t >= tokenizer_.size()) throw Error("mock scorer: prefix token id out of range");
        bool fresh = e.prompt ? by_prompt_.emplace(std::pair{*e.prompt, e.prefix}, e.log_probs).second
                              : by_prefix_.emplace(e.prefix, e.log_probs).second;
        if (!fresh) throw Error("mock scorer: duplicate context");
    }
}

std::vector<double> MockScorer::next_log_probs(std::string_view prompt, std::span<const TokenId> prefix) {
    std::vector<TokenId> key(prefix.begin(), prefix.end());
    if (!by_prompt_.empty()) {
        if (auto it = by_prompt_.find({std::string(prompt), key}); it != by_prompt_.end()) return it->second;
    }
    if (auto it = by_prefix_.find(key); it != by_prefix_.end()) return it->second;
    const double u = -std::log(static_cast<double>(tokenizer_.size()));
    return std::vector<double>(tokenizer_.size(), u);
}

std::unique_ptr<MockScorer> mock_scorer(Tokenizer tokenizer, std::vector<MockScorer::Entry> entries) {
    return std::make_unique<MockScorer>(std::move(tokenizer), std::move(entries));
}

// ---- Beam search -----------------------------------------------------------

std::vector<Hypothesis> beam_search(TokenScorer& scorer, std::string_view prompt, const BeamOptions& options) {
    check_beam_options(options);
    const auto& tok = scorer.tokenizer();
    const TokenId end = tok.end();
    const std::size_t vocab = tok.size();

    std::vector<Hypothesis> live{Hypothesis{}};
    std::vector<Hypothesis> finished;
    for (std::size_t step = 1; step <= options.max_len && !live.empty(); ++step) {
        std::vector<Hypothesis> candidates;
        for (const auto& hyp : live) {
            const auto lp = scorer.next_log_probs(prompt, hyp.tokens);
            check_normalized(lp, vocab, scorer.tolerance());
            for (TokenId v = 0; v < vocab; ++v) {
                if (lp[v] == kNegInf) continue;
                Hypothesis next{hyp.tokens, hyp.log_prob + lp[v], false, {}};
                next.tokens.push_back(v);
                if (v == end) {
                    if (hyp.tokens.size() < options.min_len) continue;
                    next.finished = true;
                    finished.push_back(std::move(next));
                } else {
                    candidates.push_back(std::move(next));
                }
            }
        }
        sort_hypotheses(candidates, false);
        if (candidates.size() > options.beam_width) candidates.resize(options.beam_width);
        live = std::move(candidates);
        if (finished.size() >= options.beam_width) {
            live.clear();
            break;
        }
    }
    return assemble(std::move(finished), std::move(live), options);
}

std::vector<RankedEntity> decode_entities(const KnowledgeGraph& graph, const Tokenizer& tokenizer,
                                          std::span<const Hypothesis> hypotheses) {
    std::vector<RankedEntity> out;
    std::set<EntityId> seen;
    for (const auto& h : hypotheses) {
        const auto e = graph.find_entity(tokenizer.decode(h.tokens));
        if (!e || !seen.insert(*e).second) continue;
        out.push_back({*e, h.log_prob});
    }
    return out;
}

// ---- Trie ------------------------------------------------------------------

NameTrie::NameTrie() : nodes_(1) {}

void NameTrie::insert(std::string_view label, EntityId entity, const Tokenizer& tokenizer) {
    if (label.empty()) throw Error("name trie: empty entity label");
    std::vector<TokenId> tokens;
    try {
        tokens = tokenizer.encode(label);
    } catch (const Error&) {
        tokens.clear();
    }
    if (tokens.empty() || tokenizer.decode(tokens) != label)
        throw Error("name trie: label does not round-trip through the tokenizer: '" + std::string(label) + "'");
    std::uint32_t cur = kRoot;
    for (const auto t : tokens) {
        auto it = nodes_[cur].children.find(t);
        if (it == nodes_[cur].children.end()) {
            const auto id = static_cast<std::uint32_t>(nodes_.size());
            nodes_[cur].children.emplace(t, id);
            nodes_.emplace_back();
            cur = id;
        } else {
            cur = it->second;
        }
    }
    auto& ents = nodes_[cur].entities;
    if (ents.empty()) ++terminals_;
    if (std::find(ents.begin(), ents.end(), entity) == ents.end()) {
        ents.insert(std::upper_bound(ents.begin(), ents.end(), entity), entity);
    }
}

std::optional<std::uint32_t> NameTrie::walk(std::span<const TokenId> tokens) const {
    std::uint32_t cur = kRoot;
    for (const auto t : tokens) {
        auto it = nodes_[cur].children.find(t);
        if (it == nodes_[cur].children.end()) return std::nullopt;
        cur = it->second;
    }
    return cur;
}

NameTrie build_trie(std::span<const std::pair<std::string, EntityId>> labels, const Tokenizer& tokenizer) {
    if (labels.empty()) throw Error("name trie: no labels");
    NameTrie trie;
    for (const auto& [label, e] : labels) trie.insert(label, e, tokenizer);
    return trie;
}

NameTrie build_trie(const KnowledgeGraph& graph, const Tokenizer& tokenizer) {
    std::vector<std::pair<std::string, EntityId>> labels;
    labels.reserve(graph.num_entities());
    for (std::size_t i = 0; i < graph.num_entities(); ++i)
        labels.emplace_back(graph.entity_label(entity_at(i)), entity_at(i));
    return build_trie(labels, tokenizer);
}

std::vector<Hypothesis> constrained_beam_search(TokenScorer& scorer, const NameTrie& trie, std::string_view prompt,
                                                const BeamOptions& options) {
    check_beam_options(options);
    if (trie.empty()) throw Error("constrained decoding: empty entity trie");
    const auto& tok = scorer.tokenizer();
    const TokenId end = tok.end();
    const std::size_t vocab = tok.size();

    std::vector<Live> live{Live{}};
    std::vector<Hypothesis> finished;
    for (std::size_t step = 1; step <= options.max_len && !live.empty(); ++step) {
        std::vector<Live> candidates;
        for (const auto& cur : live) {
            const auto lp = scorer.next_log_probs(prompt, cur.hyp.tokens);
            check_normalized(lp, vocab, scorer.tolerance());
            const auto& node = trie.node(cur.node);
            for (const auto& [t, child] : node.children)
                if (t >= vocab) throw Error("constrained decoding: trie token outside the scorer vocabulary");
            const bool may_end = !node.entities.empty() && cur.hyp.tokens.size() >= options.min_len;

            std::vector<double> allowed;
            for (const auto& [t, child] : node.children) allowed.push_back(lp[t]);
            if (may_end) allowed.push_back(lp[end]);
            const double lse = log_sum_exp(allowed);
            if (lse == kNegInf) continue;

            for (const auto& [t, child] : node.children) {
                if (lp[t] == kNegInf) continue;
                Live next{Hypothesis{cur.hyp.tokens, cur.hyp.log_prob + (lp[t] - lse), false, {}}, child};
                next.hyp.tokens.push_back(t);
                candidates.push_back(std::move(next));
            }
            if (may_end && lp[end] != kNegInf) {
                Hypothesis done{cur.hyp.tokens, cur.hyp.log_prob + (lp[end] - lse), true, node.entities};
                done.tokens.push_back(end);
                finished.push_back(std::move(done));
            }
        }
        std::stable_sort(candidates.begin(), candidates.end(), [](const Live& a, const Live& b) {
            if (a.hyp.log_prob != b.hyp.log_prob) return a.hyp.log_prob > b.hyp.log_prob;
            return a.hyp.tokens < b.hyp.tokens;
        });
        if (candidates.size() > options.beam_width) candidates.resize(options.beam_width);
        live = std::move(candidates);
        if (finished.size() >= options.beam_width) {
            live.clear();
            break;
        }
    }

    // Hypotheses cut off at max_len count only if they sit on a terminal.
    std::vector<Hypothesis> unfinished;
    for (auto& l : live) {
        const auto& ents = trie.node(l.node).entities;
        if (ents.empty()) continue;
        l.hyp.entities = ents;
        unfinished.push_back(std::move(l.hyp));
    }
    return assemble(std::move(finished), std::move(unfinished), options);
}

std::vector<RankedEntity> constrained_decode(TokenScorer& scorer, const NameTrie& trie, std::string_view prompt,
                                             const BeamOptions& options) {
    std::vector<RankedEntity> out;
    std::set<EntityId> seen;
    for (const auto& h : constrained_beam_search(scorer, trie, prompt, options))
        for (const auto e : h.entities)
            if (seen.insert(e).second) out.push_back({e, h.log_prob});
    return out;
}

// ---- Likelihood ------------------------------------------------------------

SequenceNll sequence_nll(TokenScorer& scorer, std::string_view prompt, std::span<const TokenId> target) {
    const auto& tok = scorer.tokenizer();
    if (target.empty() || target.back() != tok.end()) throw Error("sequence NLL: target must end with END");
    for (const auto t : target)
        if (t >= tok.size()) throw Error("sequence NLL: token id " + std::to_string(t) + " outside the vocabulary");
    SequenceNll out;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const auto lp = scorer.next_log_probs(prompt, target.first(i));
        check_normalized(lp, tok.size(), scorer.tolerance());
        out.total -= lp[target[i]];
    }
    out.per_token = out.total / static_cast<double>(target.size());
    return out;
}

// ---- TailPriorScorer -------------------------------------------------------

namespace {
std::uint64_t rel_node_key(RelationId r, std::uint32_t node) {
    return (std::uint64_t{static_cast<std::uint32_t>(r)} << 32) | node;
}
}  // namespace

TailPriorScorer::TailPriorScorer(const KnowledgeGraph& graph, TripleSubset train, Tokenizer tokenizer,
                                 double smoothing, double uniform_mix)
    : graph_(graph),
      tokenizer_(std::move(tokenizer)),
      trie_(build_trie(graph, tokenizer_)),
      smoothing_(smoothing),
      uniform_mix_(uniform_mix) {
    if (smoothing < 0 || uniform_mix <= 0 || uniform_mix > 1)
        throw Error("tail prior: smoothing must be >= 0 and uniform mix in (0, 1]");

    std::vector<std::vector<std::uint32_t>> paths(graph.num_entities());
    subtree_entities_.assign(trie_.num_nodes(), 0.0);
    for (std::size_t i = 0; i < graph.num_entities(); ++i) {
        std::uint32_t cur = NameTrie::kRoot;
        paths[i].push_back(cur);
        for (const auto t : tokenizer_.encode(graph.entity_label(entity_at(i)))) {
            cur = trie_.node(cur).children.at(t);
            paths[i].push_back(cur);
        }
        for (const auto n : paths[i]) subtree_entities_[n] += 1.0;
    }
    for (const auto idx : train) {
        const auto& t = graph.triple(idx);
        const auto& path = paths[index(t.tail)];
        for (const auto n : path) subtree_counts_[rel_node_key(t.relation, n)] += 1.0;
        terminal_counts_[rel_node_key(t.relation, path.back())] += 1.0;
    }
}

double TailPriorScorer::weight(std::uint32_t node, std::optional<RelationId> r, bool terminal_only) const {
    double w = smoothing_ * (terminal_only ? static_cast<double>(trie_.node(node).entities.size())
                                           : subtree_entities_[node]);
    if (r) {
        const auto& counts = terminal_only ? terminal_counts_ : subtree_counts_;
        if (auto it = counts.find(rel_node_key(*r, node)); it != counts.end()) w += it->second;
    }
    return w;
}

std::vector<double> TailPriorScorer::next_log_probs(std::string_view prompt, std::span<const TokenId> prefix) {
    const std::size_t vocab = tokenizer_.size();
    const double u = 1.0 / static_cast<double>(vocab);
    std::vector<double> p(vocab, 0.0);

    std::optional<RelationId> r;
    if (auto label = prompt_relation(prompt)) r = graph_.find_relation(*label);

    double total = 0;
    if (auto node = trie_.walk(prefix)) {
        for (const auto& [t, child] : trie_.node(*node).children) {
            p[t] = weight(child, r, false);
            total += p[t];
        }
        if (!trie_.node(*node).entities.empty()) {
            p[tokenizer_.end()] = weight(*node, r, true);
            total += p[tokenizer_.end()];
        }
    }
    std::vector<double> out(vocab);
    for (std::size_t v = 0; v < vocab; ++v) {
        const double q = total > 0 ? (1.0 - uniform_mix_) * p[v] / total + uniform_mix_ * u : u;
        out[v] = std::log(q);
    }
    return out;
}

}  // namespace kgic
