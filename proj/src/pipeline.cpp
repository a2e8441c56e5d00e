#include "kgic/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

namespace kgic {

namespace {

// Shortest text that reads back to the same double.
std::string fmt_double(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::set<std::uint64_t> gold_pair_keys(std::span<const Triple> gold) {
    std::set<std::uint64_t> out;
    for (const auto& t : gold) out.insert(pair_key(t.head, t.relation));
    return out;
}

std::set<std::uint64_t> predicted_pair_keys(std::span<const CandidatePair> pairs) {
    std::set<std::uint64_t> out;
    for (const auto& p : pairs) out.insert(pair_key(p.head, p.relation));
    return out;
}

}  // namespace

// ---- Candidates and pair metrics -------------------------------------------

std::vector<CandidatePair> generate_candidates(const KnowledgeGraph& graph, PropertyPredictor& predictor,
                                               std::span<const EntityId> heads, double threshold) {
    std::vector<CandidatePair> out;
    for (const auto h : heads) {
        PropertyScores scores;
        try {
            scores = predictor.scores(h);
        } catch (const std::exception& e) {
            throw Error("stage one (" + predictor.name() + ") failed for head '" + graph.entity_label(h) +
                        "': " + e.what());
        }
        for (std::size_t r = 0; r < scores.size(); ++r)
            if (scores[r] >= threshold) out.push_back({h, relation_at(r), scores[r]});
    }
    return out;
}

double pair_precision(std::span<const CandidatePair> pairs, std::span<const Triple> gold, bool* empty) {
    const auto predicted = predicted_pair_keys(pairs);
    if (empty != nullptr) *empty = predicted.empty();
    if (predicted.empty()) return 0.0;
    const auto truth = gold_pair_keys(gold);
    std::size_t hit = 0;
    for (const auto k : predicted) hit += truth.count(k);
    return static_cast<double>(hit) / static_cast<double>(predicted.size());
}

double coverage(std::span<const CandidatePair> pairs, std::span<const Triple> gold) {
    if (gold.empty()) return 0.0;
    const auto predicted = predicted_pair_keys(pairs);
    std::size_t covered = 0;
    for (const auto& t : gold) covered += predicted.count(pair_key(t.head, t.relation));
    return static_cast<double>(covered) / static_cast<double>(gold.size());
}

// ---- Link predictors -------------------------------------------------------

namespace {
// Best k of `scored` by score desc then handle asc, skipping excluded tails.
std::vector<ScoredTail> top_k(std::vector<ScoredTail> scored, std::size_t k, const std::optional<TailFilter>& exclude,
                              EntityId h, RelationId r) {
    if (exclude) {
        std::erase_if(scored, [&](const ScoredTail& s) { return exclude->contains(h, r, s.entity); });
    }
    const auto better = [](const ScoredTail& a, const ScoredTail& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.entity < b.entity;
    };
    const std::size_t n = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), better);
    scored.resize(n);
    return scored;
}
}  // namespace

KgeLinkPredictor::KgeLinkPredictor(const EmbeddingTable& table, std::optional<TailFilter> exclude)
    : table_(table), exclude_(std::move(exclude)) {}

std::vector<ScoredTail> KgeLinkPredictor::predict(EntityId head, RelationId relation, std::size_t k) {
    const auto scores = score_tails(table_, head, relation);
    std::vector<ScoredTail> scored;
    scored.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) scored.push_back({entity_at(i), scores[i]});
    return top_k(std::move(scored), k, exclude_, head, relation);
}

GenerativeLinkPredictor::GenerativeLinkPredictor(const KnowledgeGraph& graph, TokenScorer& scorer,
                                                 std::uint64_t train_fingerprint, BeamOptions beam, TextMask mask,
                                                 std::optional<TailFilter> exclude, std::string name)
    : graph_(graph),
      scorer_(scorer),
      trie_(build_trie(graph, scorer.tokenizer())),
      fingerprint_(train_fingerprint),
      beam_(beam),
      mask_(mask),
      exclude_(std::move(exclude)),
      name_(std::move(name)) {}

std::vector<ScoredTail> GenerativeLinkPredictor::predict(EntityId head, RelationId relation, std::size_t k) {
    auto options = beam_;
    options.beam_width = std::max(options.beam_width, k);
    const auto prompt = build_prompt(graph_, head, relation, mask_);
    std::vector<ScoredTail> scored;
    for (const auto& re : constrained_decode(scorer_, trie_, prompt.text, options))
        scored.push_back({re.entity, re.log_prob});
    return top_k(std::move(scored), k, exclude_, head, relation);
}

// ---- Completion ------------------------------------------------------------

std::vector<InstancePrediction> complete(LinkPredictor& predictor, std::span<const CandidatePair> pairs,
                                         const CompleteOptions& options) {
    std::vector<InstancePrediction> out(pairs.size());
    const auto work = [&](std::size_t i) {
        out[i].pair = pairs[i];
        try {
            out[i].tails = predictor.predict(pairs[i].head, pairs[i].relation, options.k_max);
            if (out[i].tails.size() > options.k_max) out[i].tails.resize(options.k_max);
        } catch (const std::exception& e) {
            out[i].tails.clear();
            out[i].error = e.what();
            if (out[i].error.empty()) out[i].error = "unknown failure";
        }
    };

    const std::size_t jobs = predictor.concurrent() ? std::max<std::size_t>(1, options.jobs) : 1;
    if (jobs == 1 || pairs.size() < 2) {
        for (std::size_t i = 0; i < pairs.size(); ++i) work(i);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t j = 0; j < std::min(jobs, pairs.size()); ++j)
        workers.emplace_back([&] {
            for (std::size_t i = next++; i < pairs.size(); i = next++) work(i);
        });
    for (auto& w : workers) w.join();
    return out;
}

// ---- Evaluation ------------------------------------------------------------

const std::vector<std::string>& ic_definitions() {
    static const std::vector<std::string> defs{
        "pair_precision = |distinct predicted (head, relation) pairs found among the gold test triples| / "
        "|distinct predicted pairs|",
        "coverage = |gold test triples whose (head, relation) pair was predicted| / |gold test triples|",
        "hits_overall@k = |gold test triples whose tail is in the top-k list of their pair| / |gold test triples|; "
        "uncovered triples count as misses",
        "hits_conditional@k = same numerator / |covered gold test triples|",
        "closed world: a predicted tail is correct only if it forms a gold test triple",
    };
    return defs;
}

EvalReport eval_ic(std::span<const InstancePrediction> predictions, std::span<const Triple> gold,
                   const EvalIcOptions& options) {
    if (gold.empty()) throw Error("eval-ic: no gold test triples");
    if (options.stage_one_fingerprint != options.split_fingerprint ||
        options.stage_two_fingerprint != options.split_fingerprint) {
        throw LeakageError("split fingerprint mismatch: stage one trained on " +
                           fingerprint_hex(options.stage_one_fingerprint) + ", stage two on " +
                           fingerprint_hex(options.stage_two_fingerprint) + ", split is " +
                           fingerprint_hex(options.split_fingerprint));
    }
    for (const auto k : options.ks)
        if (k == 0) throw Error("eval-ic: k must be >= 1");

    EvalReport report;
    report.ks = options.ks;
    report.split_fingerprint = options.split_fingerprint;
    report.config = options.config;

    std::unordered_map<std::uint64_t, const InstancePrediction*> by_pair;
    std::vector<CandidatePair> pairs;
    for (const auto& p : predictions) {
        const auto key = pair_key(p.pair.head, p.pair.relation);
        if (by_pair.emplace(key, &p).second) pairs.push_back(p.pair);
        if (!p.error.empty()) ++report.counts.failed_pairs;
    }

    bool empty = false;
    report.pair_precision = pair_precision(pairs, gold, &empty);
    if (empty) report.warnings.emplace_back("no candidate pairs were predicted; pair precision reported as 0");
    report.coverage = coverage(pairs, gold);

    const auto truth = gold_pair_keys(gold);
    report.counts.gold_triples = gold.size();
    report.counts.gold_pairs = truth.size();
    report.counts.predicted_pairs = pairs.size();
    for (const auto& p : pairs) report.counts.correct_pairs += truth.count(pair_key(p.head, p.relation));
    if (report.counts.failed_pairs > 0)
        report.warnings.push_back(std::to_string(report.counts.failed_pairs) +
                                  " pair(s) failed in stage two and count as misses");

    std::vector<std::size_t> hits(options.ks.size(), 0);
    for (const auto& t : gold) {
        auto it = by_pair.find(pair_key(t.head, t.relation));
        if (it == by_pair.end()) continue;
        ++report.counts.covered_triples;
        const auto& tails = it->second->tails;
        std::size_t rank = 0;
        for (std::size_t i = 0; i < tails.size(); ++i)
            if (tails[i].entity == t.tail) {
                rank = i + 1;
                break;
            }
        if (rank == 0) continue;
        for (std::size_t j = 0; j < options.ks.size(); ++j)
            if (rank <= options.ks[j]) ++hits[j];
    }
    for (std::size_t j = 0; j < options.ks.size(); ++j) {
        report.hits_overall.push_back(static_cast<double>(hits[j]) / static_cast<double>(gold.size()));
        report.hits_conditional.push_back(report.counts.covered_triples == 0
                                              ? 0.0
                                              : static_cast<double>(hits[j]) /
                                                    static_cast<double>(report.counts.covered_triples));
    }
    return report;
}

// ---- Runs ------------------------------------------------------------------

std::string to_string(StageOneMethod m) {
    switch (m) {
        case StageOneMethod::recoin: return "recoin";
        case StageOneMethod::hybrid: return "hybrid";
        case StageOneMethod::linear: return "linear";
        case StageOneMethod::remote: return "remote";
    }
    return "?";
}

std::string to_string(StageTwoMethod m) {
    switch (m) {
        case StageTwoMethod::transe: return "transe";
        case StageTwoMethod::rotate: return "rotate";
        case StageTwoMethod::generative_local: return "generative-local-mock";
        case StageTwoMethod::generative_remote: return "generative-remote";
    }
    return "?";
}

StageOneMethod parse_stage_one(std::string_view s) {
    for (auto m : {StageOneMethod::recoin, StageOneMethod::hybrid, StageOneMethod::linear, StageOneMethod::remote})
        if (s == to_string(m)) return m;
    throw Error("unknown stage-one method '" + std::string(s) + "' (recoin, hybrid, linear, remote)");
}

StageTwoMethod parse_stage_two(std::string_view s) {
    for (auto m : {StageTwoMethod::transe, StageTwoMethod::rotate, StageTwoMethod::generative_local,
                   StageTwoMethod::generative_remote})
        if (s == to_string(m)) return m;
    throw Error("unknown stage-two method '" + std::string(s) +
                "' (transe, rotate, generative-local-mock, generative-remote)");
}

ConfigEcho RunConfig::echo() const {
    ConfigEcho e;
    e.emplace_back("seed", std::to_string(seed));
    e.emplace_back("ratios", fmt_double(ratios.train) + "," + fmt_double(ratios.valid) + "," + fmt_double(ratios.test));
    e.emplace_back("stage_one", to_string(stage_one));
    e.emplace_back("threshold", threshold ? fmt_double(*threshold) : "tuned");
    if (stage_one == StageOneMethod::hybrid) {
        e.emplace_back("hybrid.k", std::to_string(hybrid.k));
        e.emplace_back("hybrid.alpha", fmt_double(hybrid.alpha));
    }
    if (stage_one == StageOneMethod::linear) {
        e.emplace_back("linear.epochs", std::to_string(linear.epochs));
        e.emplace_back("linear.learning_rate", fmt_double(linear.learning_rate));
    }
    e.emplace_back("stage_two", to_string(stage_two));
    if (stage_two == StageTwoMethod::transe || stage_two == StageTwoMethod::rotate) {
        e.emplace_back("kge.dim", std::to_string(kge.dim));
        if (kge.model == KgeModel::transe) e.emplace_back("kge.norm", std::to_string(kge.norm));
        e.emplace_back("kge.margin", fmt_double(kge.margin));
        e.emplace_back("kge.adversarial_temperature", fmt_double(kge.adversarial_temperature));
        e.emplace_back("kge.negatives", std::to_string(kge.negatives));
        e.emplace_back("kge.negative_mode", to_string(kge.negative_mode));
        e.emplace_back("kge.epochs", std::to_string(kge.epochs));
        e.emplace_back("kge.batch_size", std::to_string(kge.batch_size));
        e.emplace_back("kge.learning_rate", fmt_double(kge.learning_rate));
    } else {
        e.emplace_back("beam.width", std::to_string(beam.beam_width));
        e.emplace_back("beam.max_len", std::to_string(beam.max_len));
        e.emplace_back("beam.length_normalize", beam.length_normalize ? "true" : "false");
    }
    e.emplace_back("k_max", std::to_string(k_max));
    e.emplace_back("exclude_known", exclude_known ? "true" : "false");
    if (stage_one == StageOneMethod::remote || stage_two == StageTwoMethod::generative_remote) {
        e.emplace_back("backend", backend_spec(backend));
        e.emplace_back("backend.timeout", fmt_double(backend.timeout_seconds));
        e.emplace_back("backend.max_retries", std::to_string(backend.max_retries));
    }
    e.emplace_back("mask.types", mask.types ? "true" : "false");
    e.emplace_back("mask.description", mask.description ? "true" : "false");
    e.emplace_back("jobs", std::to_string(jobs));
    return e;
}

std::vector<Triple> subset_triples(const KnowledgeGraph& graph, TripleSubset subset) {
    std::vector<Triple> out;
    out.reserve(subset.size());
    for (const auto i : subset) out.push_back(graph.triple(i));
    return out;
}

std::unique_ptr<PropertyPredictor> make_property_predictor(const KnowledgeGraph& graph, const SplitSet& split,
                                                           const RunConfig& config) {
    switch (config.stage_one) {
        case StageOneMethod::recoin: return std::make_unique<RecoinPredictor>(graph, split.train);
        case StageOneMethod::hybrid: {
            auto opts = config.hybrid;
            opts.mask = config.mask;
            return std::make_unique<HybridPredictor>(graph, split.train, opts);
        }
        case StageOneMethod::linear: {
            LinearPredictorOptions opts{config.linear, config.mask};
            opts.train.seed = config.seed;
            return std::make_unique<LinearPredictor>(graph, split.train, opts);
        }
        case StageOneMethod::remote:
            return remote_property_scorer(config.backend, graph,
                                          config.remote_fingerprint.value_or(split_fingerprint(split)), config.mask);
    }
    throw Error("unknown stage-one method");
}

double tune_stage_one(const KnowledgeGraph& graph, const SplitSet& split, PropertyPredictor& predictor) {
    const auto heads = distinct_heads(graph, split.valid);
    if (heads.empty()) throw Error("cannot tune the threshold: validation split is empty");
    const auto scores = score_entities(predictor, heads);
    const auto gold = gold_rows(graph, heads, split.valid);
    const auto grid = default_threshold_grid();
    return tune_threshold(scores, gold, grid);
}

StageTwo make_link_predictor(const KnowledgeGraph& graph, const SplitSet& split, const RunConfig& config) {
    StageTwo out;
    std::optional<TailFilter> exclude;
    if (config.exclude_known) exclude = TailFilter(graph, split.train);
    const auto fp = split_fingerprint(split);

    switch (config.stage_two) {
        case StageTwoMethod::transe:
        case StageTwoMethod::rotate: {
            auto kge = config.kge;
            kge.model = config.stage_two == StageTwoMethod::transe ? KgeModel::transe : KgeModel::rotate;
            kge.seed = config.seed;
            const auto train = subset_triples(graph, split.train);
            auto result = train_kge(kge, graph.num_entities(), graph.num_relations(), train);
            result.table.train_fingerprint = fp;
            out.table = std::make_unique<EmbeddingTable>(std::move(result.table));
            out.predictor = std::make_unique<KgeLinkPredictor>(*out.table, std::move(exclude));
            break;
        }
        case StageTwoMethod::generative_local: {
            auto tok = Tokenizer::characters(graph.entities().labels());
            out.scorer = std::make_unique<TailPriorScorer>(graph, split.train, std::move(tok));
            out.predictor = std::make_unique<GenerativeLinkPredictor>(graph, *out.scorer, fp, config.beam, config.mask,
                                                                      std::move(exclude), "generative-local-mock");
            break;
        }
        case StageTwoMethod::generative_remote: {
            out.scorer = remote_token_scorer(config.backend);
            out.predictor = std::make_unique<GenerativeLinkPredictor>(
                graph, *out.scorer, config.remote_fingerprint.value_or(fp), config.beam, config.mask,
                std::move(exclude), "generative-remote");
            break;
        }
    }
    return out;
}

IcRun run_ic(const KnowledgeGraph& graph, const SplitSet& split, const RunConfig& config, StageTwo* stage_two) {
    IcRun run;
    auto stage_one = make_property_predictor(graph, split, config);
    run.threshold = config.threshold ? *config.threshold : tune_stage_one(graph, split, *stage_one);

    const auto test_heads = distinct_heads(graph, split.test);
    const auto test_scores = score_entities(*stage_one, test_heads);
    run.stage_one_test = micro_prf(select_properties(test_scores, run.threshold), gold_rows(graph, test_heads, split.test));
    for (std::size_t i = 0; i < test_heads.size(); ++i)
        for (std::size_t r = 0; r < test_scores.cols; ++r)
            if (test_scores.at(i, r) >= run.threshold)
                run.candidates.push_back({test_heads[i], relation_at(r), test_scores.at(i, r)});

    StageTwo local;
    if (stage_two == nullptr || !stage_two->predictor) {
        local = make_link_predictor(graph, split, config);
        if (stage_two != nullptr) *stage_two = std::move(local);
    }
    LinkPredictor& predictor = stage_two != nullptr ? *stage_two->predictor : *local.predictor;

    run.predictions = complete(predictor, run.candidates, {config.k_max, config.jobs});

    EvalIcOptions eval;
    eval.split_fingerprint = split_fingerprint(split);
    eval.stage_one_fingerprint = stage_one->train_fingerprint();
    eval.stage_two_fingerprint = predictor.train_fingerprint();
    eval.config = config.echo();
    const auto gold = subset_triples(graph, split.test);
    run.report = eval_ic(run.predictions, gold, eval);
    if (auto* recoin = dynamic_cast<RecoinPredictor*>(stage_one.get()); recoin && recoin->untyped_queries() > 0)
        run.report.warnings.push_back(std::to_string(recoin->untyped_queries()) +
                                      " untyped head(s) scored all zeros under recoin");
    return run;
}

std::vector<TextMask> all_masks() { return {{false, false}, {true, false}, {false, true}, {true, true}}; }

std::string mask_label(TextMask mask) {
    if (mask.types && mask.description) return "w/o types, w/o description";
    if (mask.types) return "w/o types";
    if (mask.description) return "w/o description";
    return "full";
}

std::vector<AblationRow> ablate(const KnowledgeGraph& graph, const SplitSet& split, const RunConfig& config,
                                std::span<const TextMask> masks) {
    std::vector<AblationRow> rows;
    std::optional<double> threshold = config.threshold;
    StageTwo shared_kge;
    const bool kge = config.stage_two == StageTwoMethod::transe || config.stage_two == StageTwoMethod::rotate;
    for (const auto mask : masks) {
        auto cfg = config;
        cfg.mask = mask;
        cfg.threshold = threshold;
        StageTwo fresh;
        auto run = run_ic(graph, split, cfg, kge ? &shared_kge : &fresh);
        if (!threshold) threshold = run.threshold;
        rows.push_back({mask, mask_label(mask), std::move(run)});
    }
    return rows;
}

}  // namespace kgic
