// kgic: command-line front end for ingestion, splitting, property prediction,
// link prediction and instance completion.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kgic/backend.hpp"
#include "kgic/graph.hpp"
#include "kgic/ingest.hpp"
#include "kgic/kge.hpp"
#include "kgic/pipeline.hpp"
#include "kgic/property.hpp"
#include "kgic/report.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct UsageError : kgic::Error {
    using Error::Error;
};

// ---- Shared options --------------------------------------------------------

struct DataOptions {
    std::vector<std::string> triples;
    std::string meta;
    std::string graph;  // snapshot written by `ingest --out`
    std::string split;  // split file written by `split --out`
    std::uint64_t seed = 0;
    std::string ratios = "0.7,0.15,0.15";
};

struct RunOptions {
    std::string stage_one = "recoin";
    std::optional<double> threshold;
    std::size_t hybrid_k = 10;
    double hybrid_alpha = 0.5;
    std::size_t linear_epochs = 200;
    double linear_lr = 1.0;
    std::string stage_two = "transe";
    std::size_t dim = 100;
    int norm = 1;
    std::optional<double> margin;
    double adv_temperature = 1.0;
    std::size_t negatives = 16;
    std::string negative_mode = "tail";
    std::size_t epochs = 100;
    std::size_t batch_size = 256;
    double lr = 0.01;
    std::size_t beam_width = 10;
    std::size_t max_len = 64;
    bool length_normalize = false;
    std::size_t k_max = 10;
    bool keep_known = false;
    std::string backend;
    double backend_timeout = 30.0;
    int backend_retries = 2;
    std::string remote_fingerprint;
    bool mask_types = false;
    bool mask_description = false;
    std::size_t jobs = 1;
};

void add_data_options(CLI::App* app, DataOptions& d, bool with_split = true) {
    app->add_option("--triples", d.triples, "Triple files (head<TAB>relation<TAB>tail), concatenated");
    app->add_option("--meta", d.meta, "Entity metadata file (entity<TAB>types<TAB>description)");
    app->add_option("--graph", d.graph, "Graph snapshot written by `ingest --out` (instead of --triples)");
    app->add_option("--seed", d.seed, "Seed for the split and every stochastic stage");
    app->add_option("--ratios", d.ratios, "Split ratios train,valid,test");
    if (with_split) app->add_option("--split", d.split, "Split file written by `split --out` (instead of --seed/--ratios)");
}

void add_kge_options(CLI::App* app, RunOptions& o) {
    app->add_option("--dim", o.dim, "Embedding dimension");
    app->add_option("--norm", o.norm, "TransE distance norm (1 or 2)");
    app->add_option("--margin", o.margin, "Margin gamma (default 5 for TransE, 12 for RotatE)");
    app->add_option("--adv-temperature", o.adv_temperature, "Self-adversarial temperature alpha");
    app->add_option("--negatives", o.negatives, "Negatives per positive");
    app->add_option("--negative-mode", o.negative_mode, "Corrupt tail, head or both");
    app->add_option("--epochs", o.epochs, "Training epochs");
    app->add_option("--batch-size", o.batch_size, "Mini-batch size");
    app->add_option("--lr", o.lr, "SGD learning rate");
}

void add_stage_one_options(CLI::App* app, RunOptions& o) {
    app->add_option("--method,--stage-one", o.stage_one, "Property predictor: recoin, hybrid, linear, remote");
    app->add_option("--threshold", o.threshold, "Selection threshold (tuned on valid when omitted)");
    app->add_option("--hybrid-k", o.hybrid_k, "Neighbours for the hybrid recommender");
    app->add_option("--hybrid-alpha", o.hybrid_alpha, "Weight of item-KNN in the hybrid blend");
    app->add_option("--linear-epochs", o.linear_epochs, "Gradient steps for the linear classifier");
    app->add_option("--linear-lr", o.linear_lr, "Learning rate for the linear classifier");
}

void add_backend_options(CLI::App* app, RunOptions& o) {
    app->add_option("--backend", o.backend, "Model server: stdio:<command> or tcp:<host>:<port> (KGIC_BACKEND overrides)");
    app->add_option("--backend-timeout", o.backend_timeout, "Seconds per backend request attempt");
    app->add_option("--backend-retries", o.backend_retries, "Retries after a transport failure");
    app->add_option("--remote-fingerprint", o.remote_fingerprint,
                    "Train-split fingerprint (hex) the remote models were fitted on; defaults to the current split");
}

void add_mask_options(CLI::App* app, RunOptions& o) {
    app->add_flag("--mask-types", o.mask_types, "Leave entity types out of rendered text");
    app->add_flag("--mask-description", o.mask_description, "Leave descriptions out of rendered text");
}

void add_run_options(CLI::App* app, RunOptions& o) {
    add_stage_one_options(app, o);
    app->add_option("--stage-two", o.stage_two, "Link predictor: transe, rotate, generative-local-mock, generative-remote");
    add_kge_options(app, o);
    app->add_option("--beam-width", o.beam_width, "Beam width for generative decoding");
    app->add_option("--max-len", o.max_len, "Maximum decoded tokens, END included");
    app->add_flag("--length-normalize", o.length_normalize, "Rank beam hypotheses by per-token log-prob");
    app->add_option("--k-max", o.k_max, "Tails kept per candidate pair");
    app->add_flag("--keep-known", o.keep_known, "Keep tails already in train in the stage-two lists");
    add_backend_options(app, o);
    add_mask_options(app, o);
    app->add_option("--jobs", o.jobs, "Parallel stage-two workers");
}

kgic::SplitRatios parse_ratios(const std::string& text) {
    std::vector<double> v;
    std::stringstream in(text);
    std::string part;
    while (std::getline(in, part, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(part, &used));
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw UsageError("invalid --ratios '" + text + "'");
        }
    }
    if (v.size() != 3) throw UsageError("--ratios needs three comma-separated values");
    kgic::SplitRatios r{v[0], v[1], v[2]};
    try {
        r.validate();
    } catch (const kgic::Error& e) {
        throw UsageError(e.what());
    }
    return r;
}

std::uint64_t parse_hex(const std::string& text) {
    try {
        std::size_t used = 0;
        const auto v = std::stoull(text, &used, 16);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw UsageError("invalid fingerprint '" + text + "'");
    }
}

kgic::RunConfig make_run_config(const DataOptions& d, const RunOptions& o) {
    kgic::RunConfig c;
    try {
        c.seed = d.seed;
        c.ratios = parse_ratios(d.ratios);
        c.stage_one = kgic::parse_stage_one(o.stage_one);
        c.threshold = o.threshold;
        if (o.threshold && (*o.threshold < 0 || *o.threshold > 1)) throw UsageError("--threshold must be in [0, 1]");
        c.hybrid.k = o.hybrid_k;
        c.hybrid.alpha = o.hybrid_alpha;
        if (o.hybrid_alpha < 0 || o.hybrid_alpha > 1) throw UsageError("--hybrid-alpha must be in [0, 1]");
        c.linear.epochs = o.linear_epochs;
        c.linear.learning_rate = o.linear_lr;
        c.stage_two = kgic::parse_stage_two(o.stage_two);
        const auto model = c.stage_two == kgic::StageTwoMethod::rotate ? kgic::KgeModel::rotate : kgic::KgeModel::transe;
        c.kge = kgic::KgeConfig::defaults(model);
        c.kge.dim = o.dim;
        c.kge.norm = o.norm;
        if (o.margin) c.kge.margin = *o.margin;
        c.kge.adversarial_temperature = o.adv_temperature;
        c.kge.negatives = o.negatives;
        c.kge.negative_mode = kgic::parse_negative_mode(o.negative_mode);
        c.kge.epochs = o.epochs;
        c.kge.batch_size = o.batch_size;
        c.kge.learning_rate = o.lr;
        c.kge.seed = d.seed;
        c.kge.validate();
        c.beam.beam_width = o.beam_width;
        c.beam.max_len = o.max_len;
        c.beam.length_normalize = o.length_normalize;
        if (o.beam_width == 0 || o.max_len == 0) throw UsageError("--beam-width and --max-len must be >= 1");
        c.k_max = o.k_max;
        if (o.k_max == 0) throw UsageError("--k-max must be >= 1");
        c.exclude_known = !o.keep_known;
        c.mask = {o.mask_types, o.mask_description};
        c.jobs = o.jobs == 0 ? 1 : o.jobs;
        if (!o.remote_fingerprint.empty()) c.remote_fingerprint = parse_hex(o.remote_fingerprint);

        const bool remote = c.stage_one == kgic::StageOneMethod::remote ||
                            c.stage_two == kgic::StageTwoMethod::generative_remote;
        c.backend.timeout_seconds = o.backend_timeout;
        c.backend.max_retries = o.backend_retries;
        if (!o.backend.empty()) c.backend = kgic::parse_backend_spec(o.backend, c.backend);
        c.backend = kgic::apply_backend_env(c.backend);
        if (remote) c.backend.validate();
    } catch (const UsageError&) {
        throw;
    } catch (const kgic::Error& e) {
        throw UsageError(e.what());
    }
    return c;
}

// ---- Loading ---------------------------------------------------------------

kgic::KnowledgeGraph load_graph(const DataOptions& d, kgic::IngestStats* stats = nullptr) {
    if (!d.graph.empty()) {
        if (!d.triples.empty()) throw UsageError("give either --graph or --triples, not both");
        std::ifstream in(d.graph, std::ios::binary);
        if (!in) throw kgic::Error("cannot open graph snapshot " + d.graph);
        return kgic::KnowledgeGraph::load(in);
    }
    if (d.triples.empty()) throw UsageError("no dataset: pass --triples (or --graph)");
    kgic::DatasetConfig cfg;
    for (const auto& p : d.triples) cfg.triples_paths.emplace_back(p);
    if (!d.meta.empty()) cfg.metadata_path = d.meta;
    return kgic::load_dataset(cfg, stats);
}

kgic::SplitSet load_split(const DataOptions& d, const kgic::KnowledgeGraph& graph) {
    if (!d.split.empty()) {
        std::ifstream in(d.split);
        if (!in) throw kgic::Error("cannot open split file " + d.split);
        auto split = kgic::load_split(in);
        const auto check = kgic::leakage_check(split, graph.num_triples());
        if (!check.ok()) throw kgic::Error("split file does not fit the graph: " + check.violations.front());
        return split;
    }
    return kgic::stratified_split(graph, parse_ratios(d.ratios), d.seed);
}

fs::path prepare_out(const std::string& dir) {
    fs::path p(dir);
    fs::create_directories(p);
    return p;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw kgic::Error("cannot write " + path.string());
    out << content;
}

ordered_json config_json(const kgic::ConfigEcho& echo) {
    ordered_json j = ordered_json::object();
    for (const auto& [k, v] : echo) j[k] = v;
    return j;
}

std::string dump(const ordered_json& j) { return j.dump(2, ' ', false, ordered_json::error_handler_t::replace) + '\n'; }

// ---- Subcommands -----------------------------------------------------------

int cmd_ingest(const DataOptions& d, const std::string& out) {
    kgic::IngestStats stats;
    const auto graph = load_graph(d, &stats);
    std::size_t typed = 0;
    for (std::size_t i = 0; i < graph.num_entities(); ++i)
        if (!graph.meta(kgic::entity_at(i)).types.empty()) ++typed;
    std::cout << "entities: " << graph.num_entities() << ", relations: " << graph.num_relations()
              << ", facts: " << graph.num_triples() << '\n';
    std::cout << "lines: " << stats.lines << ", duplicates dropped: " << stats.duplicates
              << ", typed entities: " << typed << ", classes: " << graph.classes().size() << '\n';
    if (!out.empty()) {
        std::ofstream f(out, std::ios::binary);
        if (!f) throw kgic::Error("cannot write " + out);
        graph.save(f);
        std::cout << "snapshot: " << out << '\n';
    }
    return 0;
}

int cmd_split(const DataOptions& d, const std::string& out) {
    const auto graph = load_graph(d);
    const auto split = kgic::stratified_split(graph, parse_ratios(d.ratios), d.seed);
    std::cout << "train: " << split.train.size() << ", valid: " << split.valid.size()
              << ", test: " << split.test.size() << '\n';
    std::cout << "fingerprint: " << kgic::fingerprint_hex(kgic::split_fingerprint(split)) << '\n';
    if (!out.empty()) {
        std::ofstream f(out);
        if (!f) throw kgic::Error("cannot write " + out);
        kgic::save_split(f, split);
    }
    return 0;
}

int cmd_train_kge(const DataOptions& d, const RunOptions& o, const std::string& out, bool verbose) {
    auto cfg = make_run_config(d, o);
    if (cfg.stage_two != kgic::StageTwoMethod::transe && cfg.stage_two != kgic::StageTwoMethod::rotate)
        throw UsageError("train-kge needs --model transe or rotate");
    if (out.empty()) throw UsageError("train-kge needs --out");
    const auto graph = load_graph(d);
    const auto split = load_split(d, graph);
    const auto train = kgic::subset_triples(graph, split.train);
    auto result = kgic::train_kge(cfg.kge, graph.num_entities(), graph.num_relations(), train);
    if (verbose)
        for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
            std::cerr << "epoch " << (e + 1) << " loss " << result.epoch_loss[e] << '\n';
    result.table.train_fingerprint = kgic::split_fingerprint(split);
    std::ofstream f(out, std::ios::binary);
    if (!f) throw kgic::Error("cannot write " + out);
    kgic::save_table(f, result.table);
    std::cout << "model: " << kgic::to_string(cfg.kge.model) << ", epochs: " << cfg.kge.epochs
              << ", final loss: " << (result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back()) << '\n';
    std::cout << "fingerprint: " << kgic::fingerprint_hex(result.table.train_fingerprint) << '\n';
    return 0;
}

int cmd_eval_lp(const DataOptions& d, const std::string& table_path, bool raw, const std::string& on,
                const std::string& out) {
    const auto graph = load_graph(d);
    const auto split = load_split(d, graph);
    std::ifstream in(table_path, std::ios::binary);
    if (!in) throw kgic::Error("cannot open embedding table " + table_path);
    const auto table = kgic::load_table(in);
    if (table.num_entities != graph.num_entities() || table.num_relations != graph.num_relations())
        throw kgic::Error("embedding table does not match the graph's entity/relation counts");
    const auto fp = kgic::split_fingerprint(split);
    if (table.train_fingerprint != fp)
        throw kgic::LeakageError("embedding table was trained on split " + kgic::fingerprint_hex(table.train_fingerprint) +
                                 ", evaluation split is " + kgic::fingerprint_hex(fp));
    const auto& subset = on == "valid" ? split.valid : split.test;
    if (subset.empty()) throw kgic::Error("nothing to evaluate: the " + on + " split is empty");

    kgic::TailFilter known(graph, graph.all_triple_indices());
    std::vector<std::size_t> ranks;
    double rr = 0, mr = 0;
    for (const auto i : subset) {
        const auto& t = graph.triple(i);
        const auto rank = kgic::rank_tail(table, t.head, t.relation, t.tail, raw ? nullptr : &known);
        ranks.push_back(rank);
        rr += 1.0 / static_cast<double>(rank);
        mr += static_cast<double>(rank);
    }
    const double n = static_cast<double>(ranks.size());
    ordered_json j;
    j["task"] = "tail link prediction";
    j["model"] = kgic::to_string(table.model);
    j["protocol"] = raw ? "raw" : "filtered";
    j["tie_break"] = "score desc, then entity handle asc";
    j["evaluated_on"] = on;
    j["triples"] = ranks.size();
    j["hits"] = {{"1", kgic::hits_at_k(ranks, 1)}, {"3", kgic::hits_at_k(ranks, 3)}, {"10", kgic::hits_at_k(ranks, 10)}};
    j["mrr"] = rr / n;
    j["mean_rank"] = mr / n;
    j["split_fingerprint"] = kgic::fingerprint_hex(fp);
    j["config"] = {{"dim", table.dim}, {"norm", table.norm}, {"seed", table.seed}};

    std::cout << kgic::format_table({"metric", "value"},
                                    {{"hits@1", kgic::format_metric(kgic::hits_at_k(ranks, 1))},
                                     {"hits@3", kgic::format_metric(kgic::hits_at_k(ranks, 3))},
                                     {"hits@10", kgic::format_metric(kgic::hits_at_k(ranks, 10))},
                                     {"mrr", kgic::format_metric(rr / n)},
                                     {"mean_rank", kgic::format_metric(mr / n)},
                                     {"triples", std::to_string(ranks.size())}});
    if (!out.empty()) write_file(prepare_out(out) / "eval_lp.json", dump(j));
    return 0;
}

struct PpResult {
    double threshold;
    std::vector<kgic::EntityId> heads;
    kgic::ScoreMatrix scores;
    kgic::BinaryMatrix selected;
    kgic::Prf prf;
    std::uint64_t fingerprint;
};

PpResult run_pp(const kgic::KnowledgeGraph& graph, const kgic::SplitSet& split, const kgic::RunConfig& cfg) {
    auto predictor = kgic::make_property_predictor(graph, split, cfg);
    PpResult r;
    r.threshold = cfg.threshold ? *cfg.threshold : kgic::tune_stage_one(graph, split, *predictor);
    r.heads = kgic::distinct_heads(graph, split.test);
    r.scores = kgic::score_entities(*predictor, r.heads);
    r.selected = kgic::select_properties(r.scores, r.threshold);
    r.prf = kgic::micro_prf(r.selected, kgic::gold_rows(graph, r.heads, split.test));
    r.fingerprint = predictor->train_fingerprint();
    return r;
}

int cmd_predict_props(const DataOptions& d, const RunOptions& o, const std::string& out) {
    const auto cfg = make_run_config(d, o);
    if (out.empty()) throw UsageError("predict-props needs --out");
    const auto graph = load_graph(d);
    const auto split = load_split(d, graph);
    const auto r = run_pp(graph, split, cfg);
    const auto dir = prepare_out(out);
    std::ofstream scores(dir / "property_scores.tsv");
    kgic::write_scores_tsv(scores, graph, r.heads, r.scores);
    std::ofstream selected(dir / "selected_pairs.tsv");
    kgic::write_selected_tsv(selected, graph, r.heads, r.selected);
    std::cout << "heads: " << r.heads.size() << ", threshold: " << r.threshold << '\n';
    return 0;
}

int cmd_eval_pp(const DataOptions& d, const RunOptions& o, const std::string& out) {
    const auto cfg = make_run_config(d, o);
    const auto graph = load_graph(d);
    const auto split = load_split(d, graph);
    const auto r = run_pp(graph, split, cfg);
    const auto fp = kgic::split_fingerprint(split);

    ordered_json j;
    j["task"] = "property prediction";
    j["method"] = kgic::to_string(cfg.stage_one);
    j["averaging"] = "micro over all (test head, relation) cells";
    j["threshold"] = r.threshold;
    j["precision"] = r.prf.precision;
    j["recall"] = r.prf.recall;
    j["f1"] = r.prf.f1;
    j["counts"] = {{"heads", r.heads.size()}, {"tp", r.prf.tp}, {"fp", r.prf.fp}, {"fn", r.prf.fn}};
    j["split_fingerprint"] = kgic::fingerprint_hex(fp);
    j["config"] = config_json(cfg.echo());

    std::cout << kgic::format_table({"method", "precision", "recall", "f1", "threshold"},
                                    {{kgic::to_string(cfg.stage_one), kgic::format_metric(r.prf.precision),
                                      kgic::format_metric(r.prf.recall), kgic::format_metric(r.prf.f1),
                                      kgic::format_metric(r.threshold)}});
    if (!out.empty()) write_file(prepare_out(out) / "eval_pp.json", dump(j));
    return 0;
}

void write_candidates(const fs::path& path, const kgic::KnowledgeGraph& graph,
                      const std::vector<kgic::InstancePrediction>& predictions, const kgic::EvalIcOptions& fps) {
    std::ofstream f(path);
    f << "# kgic candidates v1\n";
    f << "# split_fingerprint " << kgic::fingerprint_hex(fps.split_fingerprint) << '\n';
    f << "# stage_one_fingerprint " << kgic::fingerprint_hex(fps.stage_one_fingerprint) << '\n';
    f << "# stage_two_fingerprint " << kgic::fingerprint_hex(fps.stage_two_fingerprint) << '\n';
    char buf[40];
    for (const auto& p : predictions) {
        std::snprintf(buf, sizeof buf, "%.17g", p.pair.score);
        f << graph.entity_label(p.pair.head) << '\t' << graph.relation_label(p.pair.relation) << '\t' << buf << '\t'
          << (p.error.empty() ? "ok" : "failed") << '\n';
    }
}

int cmd_run_ic(const DataOptions& d, const RunOptions& o, const std::string& out) {
    const auto cfg = make_run_config(d, o);
    const auto graph = load_graph(d);
    const auto split = load_split(d, graph);
    const auto run = kgic::run_ic(graph, split, cfg);
    kgic::write_report_text(std::cout, run.report);
    if (!out.empty()) {
        const auto dir = prepare_out(out);
        write_file(dir / "report.json", kgic::report_json(run.report));
        std::ofstream txt(dir / "report.txt");
        kgic::write_report_text(txt, run.report);
        std::ofstream tsv(dir / "report.tsv");
        kgic::write_report_tsv(tsv, run.report);
        std::ofstream preds(dir / "predictions.tsv");
        kgic::write_predictions_tsv(preds, graph, run.predictions);
        kgic::EvalIcOptions fps;
        fps.split_fingerprint = kgic::split_fingerprint(split);
        fps.stage_one_fingerprint = fps.split_fingerprint;
        fps.stage_two_fingerprint = fps.split_fingerprint;
        write_candidates(dir / "candidates.tsv", graph, run.predictions, fps);
    }
    for (const auto& p : run.predictions)
        if (!p.error.empty())
            std::cerr << "warning: " << graph.entity_label(p.pair.head) << " / " << graph.relation_label(p.pair.relation)
                      << ": " << p.error << '\n';
    return 0;
}

// Reads candidates.tsv and predictions.tsv written by run-ic.
int cmd_eval_ic(const DataOptions& d, const std::string& candidates_path, const std::string& predictions_path,
                const std::string& out) {
    const auto graph = load_graph(d);
    const auto split = load_split(d, graph);
    const auto fp = kgic::split_fingerprint(split);

    std::ifstream cin_(candidates_path);
    if (!cin_) throw kgic::Error("cannot open " + candidates_path);
    kgic::EvalIcOptions opts;
    opts.split_fingerprint = fp;
    opts.stage_one_fingerprint = opts.stage_two_fingerprint = 0;
    std::vector<kgic::InstancePrediction> predictions;
    std::unordered_map<std::uint64_t, std::size_t> slot;
    std::string line;
    std::size_t lineno = 0;
    const auto entity = [&](const std::string& label, std::size_t ln) {
        auto e = graph.find_entity(label);
        if (!e) throw kgic::ParseError(ln, "unknown entity '" + label + "'");
        return *e;
    };
    const auto relation = [&](const std::string& label, std::size_t ln) {
        auto r = graph.find_relation(label);
        if (!r) throw kgic::ParseError(ln, "unknown relation '" + label + "'");
        return *r;
    };
    while (std::getline(cin_, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream s(line.substr(1));
            std::string key, value;
            s >> key >> value;
            if (key == "stage_one_fingerprint") opts.stage_one_fingerprint = parse_hex(value);
            if (key == "stage_two_fingerprint") opts.stage_two_fingerprint = parse_hex(value);
            continue;
        }
        std::vector<std::string> f;
        std::stringstream s(line);
        std::string cell;
        while (std::getline(s, cell, '\t')) f.push_back(cell);
        if (f.size() < 3) throw kgic::ParseError(lineno, "expected head, relation, score");
        kgic::InstancePrediction p;
        p.pair = {entity(f[0], lineno), relation(f[1], lineno), std::stod(f[2])};
        if (f.size() > 3 && f[3] == "failed") p.error = "failed in run-ic";
        slot.emplace(kgic::pair_key(p.pair.head, p.pair.relation), predictions.size());
        predictions.push_back(std::move(p));
    }

    std::ifstream pin(predictions_path);
    if (!pin) throw kgic::Error("cannot open " + predictions_path);
    lineno = 0;
    while (std::getline(pin, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> f;
        std::stringstream s(line);
        std::string cell;
        while (std::getline(s, cell, '\t')) f.push_back(cell);
        if (f.size() != 5) throw kgic::ParseError(lineno, "expected head, relation, tail, score, rank");
        const auto key = kgic::pair_key(entity(f[0], lineno), relation(f[1], lineno));
        auto it = slot.find(key);
        if (it == slot.end()) throw kgic::ParseError(lineno, "prediction for a pair missing from the candidates");
        predictions[it->second].tails.push_back({entity(f[2], lineno), std::stod(f[3])});
    }

    const auto gold = kgic::subset_triples(graph, split.test);
    auto report = kgic::eval_ic(predictions, gold, opts);
    report.config = {{"candidates", candidates_path}, {"predictions", predictions_path}};
    kgic::write_report_text(std::cout, report);
    if (!out.empty()) write_file(prepare_out(out) / "eval_ic.json", kgic::report_json(report));
    return 0;
}

int cmd_ablate(const DataOptions& d, const RunOptions& o, const std::string& out) {
    const auto cfg = make_run_config(d, o);
    const auto graph = load_graph(d);
    const auto split = load_split(d, graph);
    const auto masks = kgic::all_masks();
    const auto rows = kgic::ablate(graph, split, cfg, masks);
    kgic::write_ablation_text(std::cout, rows);
    if (!out.empty()) {
        const auto dir = prepare_out(out);
        write_file(dir / "ablation.json", kgic::ablation_json(rows));
        std::ofstream tsv(dir / "ablation.tsv");
        kgic::write_ablation_tsv(tsv, rows);
        std::ofstream txt(dir / "ablation.txt");
        kgic::write_ablation_text(txt, rows);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kgic: knowledge graph instance completion toolkit"};
    app.set_config("--config", "", "Key-value config file; command-line flags take precedence");
    app.require_subcommand(1);

    DataOptions data;
    RunOptions run;
    std::string out;
    std::string table;
    std::string on = "test";
    bool raw = false;
    bool verbose = false;
    std::string candidates, predictions;

    auto* ingest = app.add_subcommand("ingest", "Parse and intern a dataset; print statistics");
    add_data_options(ingest, data, false);
    ingest->add_option("--out", out, "Write a binary graph snapshot");

    auto* split = app.add_subcommand("split", "Stratified train/valid/test split; print its fingerprint");
    add_data_options(split, data, false);
    split->add_option("--out", out, "Write the split file");

    auto* train_kge = app.add_subcommand("train-kge", "Train a TransE or RotatE table on the train split");
    add_data_options(train_kge, data);
    train_kge->add_option("--model,--stage-two", run.stage_two, "transe or rotate");
    add_kge_options(train_kge, run);
    train_kge->add_option("--out", out, "Embedding table file")->required();
    train_kge->add_flag("--verbose", verbose, "Print the loss of every epoch");

    auto* eval_lp = app.add_subcommand("eval-lp", "Tail Hits@{1,3,10} and MRR of a trained table");
    add_data_options(eval_lp, data);
    eval_lp->add_option("--table", table, "Embedding table from train-kge")->required();
    eval_lp->add_flag("--raw", raw, "Raw ranking instead of filtered");
    eval_lp->add_option("--on", on, "Split to evaluate: test or valid")->check(CLI::IsMember({"test", "valid"}));
    eval_lp->add_option("--out", out, "Directory for eval_lp.json");

    auto* predict_props = app.add_subcommand("predict-props", "Score and select relations for test heads");
    add_data_options(predict_props, data);
    add_stage_one_options(predict_props, run);
    add_backend_options(predict_props, run);
    add_mask_options(predict_props, run);
    predict_props->add_option("--out", out, "Directory for property_scores.tsv and selected_pairs.tsv");

    auto* eval_pp = app.add_subcommand("eval-pp", "Micro P/R/F1 of property selection on test heads");
    add_data_options(eval_pp, data);
    add_stage_one_options(eval_pp, run);
    add_backend_options(eval_pp, run);
    add_mask_options(eval_pp, run);
    eval_pp->add_option("--out", out, "Directory for eval_pp.json");

    auto* run_ic = app.add_subcommand("run-ic", "Full instance completion: candidates, tails, evaluation");
    add_data_options(run_ic, data);
    add_run_options(run_ic, run);
    run_ic->add_option("--out", out, "Directory for reports, candidates.tsv and predictions.tsv");

    auto* eval_ic = app.add_subcommand("eval-ic", "Evaluate candidates.tsv + predictions.tsv from run-ic");
    add_data_options(eval_ic, data);
    eval_ic->add_option("--candidates", candidates, "candidates.tsv from run-ic")->required();
    eval_ic->add_option("--predictions", predictions, "predictions.tsv from run-ic")->required();
    eval_ic->add_option("--out", out, "Directory for eval_ic.json");

    auto* ablate = app.add_subcommand("ablate", "Instance completion with and without types/descriptions");
    add_data_options(ablate, data);
    add_run_options(ablate, run);
    ablate->add_option("--out", out, "Directory for ablation.json/.tsv/.txt");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }

    try {
        if (*ingest) return cmd_ingest(data, out);
        if (*split) return cmd_split(data, out);
        if (*train_kge) return cmd_train_kge(data, run, out, verbose);
        if (*eval_lp) return cmd_eval_lp(data, table, raw, on, out);
        if (*predict_props) return cmd_predict_props(data, run, out);
        if (*eval_pp) return cmd_eval_pp(data, run, out);
        if (*run_ic) return cmd_run_ic(data, run, out);
        if (*eval_ic) return cmd_eval_ic(data, candidates, predictions, out);
        if (*ablate) return cmd_ablate(data, run, out);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
