#include "kgic/report.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

#include "json.hpp"

namespace kgic {

using nlohmann::ordered_json;

namespace {

ordered_json report_object(const EvalReport& r) {
    ordered_json j;
    j["split_fingerprint"] = fingerprint_hex(r.split_fingerprint);
    ordered_json overall = ordered_json::object();
    ordered_json conditional = ordered_json::object();
    for (std::size_t i = 0; i < r.ks.size(); ++i) {
        overall[std::to_string(r.ks[i])] = r.hits_overall[i];
        conditional[std::to_string(r.ks[i])] = r.hits_conditional[i];
    }
    j["hits_overall"] = overall;
    j["hits_conditional"] = conditional;
    j["pair_precision"] = r.pair_precision;
    j["coverage"] = r.coverage;
    j["counts"] = {
        {"gold_triples", r.counts.gold_triples},       {"gold_pairs", r.counts.gold_pairs},
        {"covered_triples", r.counts.covered_triples}, {"predicted_pairs", r.counts.predicted_pairs},
        {"correct_pairs", r.counts.correct_pairs},     {"failed_pairs", r.counts.failed_pairs},
    };
    ordered_json config = ordered_json::object();
    for (const auto& [k, v] : r.config) config[k] = v;
    j["config"] = config;
    j["warnings"] = r.warnings;
    return j;
}

std::vector<std::vector<std::string>> report_rows(const EvalReport& r) {
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < r.ks.size(); ++i)
        rows.push_back({"hits_overall@" + std::to_string(r.ks[i]), format_metric(r.hits_overall[i])});
    for (std::size_t i = 0; i < r.ks.size(); ++i)
        rows.push_back({"hits_conditional@" + std::to_string(r.ks[i]), format_metric(r.hits_conditional[i])});
    rows.push_back({"pair_precision", format_metric(r.pair_precision)});
    rows.push_back({"coverage", format_metric(r.coverage)});
    rows.push_back({"gold_triples", std::to_string(r.counts.gold_triples)});
    rows.push_back({"gold_pairs", std::to_string(r.counts.gold_pairs)});
    rows.push_back({"covered_triples", std::to_string(r.counts.covered_triples)});
    rows.push_back({"predicted_pairs", std::to_string(r.counts.predicted_pairs)});
    rows.push_back({"correct_pairs", std::to_string(r.counts.correct_pairs)});
    rows.push_back({"failed_pairs", std::to_string(r.counts.failed_pairs)});
    return rows;
}

std::string tsv_escape(std::string s) {
    std::replace(s.begin(), s.end(), '\t', ' ');
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

std::vector<std::string> ablation_header(std::span<const AblationRow> rows) {
    std::vector<std::string> h{"setting", "pp_precision", "pp_recall", "pp_f1"};
    if (!rows.empty())
        for (const auto k : rows.front().run.report.ks) h.push_back("hits@" + std::to_string(k));
    h.insert(h.end(), {"pair_precision", "coverage"});
    return h;
}

std::vector<std::vector<std::string>> ablation_rows(std::span<const AblationRow> rows) {
    std::vector<std::vector<std::string>> out;
    for (const auto& row : rows) {
        const auto& r = row.run.report;
        std::vector<std::string> cells{row.label, format_metric(row.run.stage_one_test.precision),
                                       format_metric(row.run.stage_one_test.recall),
                                       format_metric(row.run.stage_one_test.f1)};
        for (const double h : r.hits_overall) cells.push_back(format_metric(h));
        cells.push_back(format_metric(r.pair_precision));
        cells.push_back(format_metric(r.coverage));
        out.push_back(std::move(cells));
    }
    return out;
}

}  // namespace

std::string format_metric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string format_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width(header.size(), 0);
    const auto measure = [&](const std::vector<std::string>& r) {
        for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) width[i] = std::max(width[i], r[i].size());
    };
    measure(header);
    for (const auto& r : rows) measure(r);
    std::string out;
    const auto emit = [&](const std::vector<std::string>& r) {
        std::string line;
        for (std::size_t i = 0; i < width.size(); ++i) {
            const std::string cell = i < r.size() ? r[i] : "";
            line += cell;
            if (i + 1 < width.size()) line += std::string(width[i] - cell.size() + 2, ' ');
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out += line + '\n';
    };
    emit(header);
    std::vector<std::string> rule;
    for (const auto w : width) rule.emplace_back(w, '-');
    emit(rule);
    for (const auto& r : rows) emit(r);
    return out;
}

void write_tsv_table(std::ostream& out, const std::vector<std::string>& header,
                     const std::vector<std::vector<std::string>>& rows) {
    const auto emit = [&](const std::vector<std::string>& r) {
        for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "\t" : "") << tsv_escape(r[i]);
        out << '\n';
    };
    emit(header);
    for (const auto& r : rows) emit(r);
}

std::string report_json(const EvalReport& report) {
    ordered_json j;
    j["definitions"] = ic_definitions();
    const auto body = report_object(report);
    for (const auto& [k, v] : body.items()) j[k] = v;
    return j.dump(2, ' ', false, ordered_json::error_handler_t::replace) + '\n';
}

void write_report_text(std::ostream& out, const EvalReport& report) {
    for (const auto& d : ic_definitions()) out << "# " << d << '\n';
    out << "# split fingerprint " << fingerprint_hex(report.split_fingerprint) << '\n';
    for (const auto& [k, v] : report.config) out << "# " << k << " = " << v << '\n';
    out << format_table({"metric", "value"}, report_rows(report));
    for (const auto& w : report.warnings) out << "warning: " << w << '\n';
}

void write_report_tsv(std::ostream& out, const EvalReport& report) {
    write_tsv_table(out, {"metric", "value"}, report_rows(report));
}

std::string ablation_json(std::span<const AblationRow> rows) {
    ordered_json j;
    j["definitions"] = ic_definitions();
    ordered_json arr = ordered_json::array();
    for (const auto& row : rows) {
        ordered_json r;
        r["setting"] = row.label;
        r["mask"] = {{"types", row.mask.types}, {"description", row.mask.description}};
        r["threshold"] = row.run.threshold;
        r["stage_one"] = {{"precision", row.run.stage_one_test.precision},
                          {"recall", row.run.stage_one_test.recall},
                          {"f1", row.run.stage_one_test.f1}};
        r["report"] = report_object(row.run.report);
        arr.push_back(r);
    }
    j["rows"] = arr;
    return j.dump(2, ' ', false, ordered_json::error_handler_t::replace) + '\n';
}

void write_ablation_text(std::ostream& out, std::span<const AblationRow> rows) {
    out << "# hits@k are overall (uncovered gold triples count as misses)\n";
    out << format_table(ablation_header(rows), ablation_rows(rows));
}

void write_ablation_tsv(std::ostream& out, std::span<const AblationRow> rows) {
    write_tsv_table(out, ablation_header(rows), ablation_rows(rows));
}

void write_predictions_tsv(std::ostream& out, const KnowledgeGraph& graph,
                           std::span<const InstancePrediction> predictions) {
    char buf[40];
    for (const auto& p : predictions) {
        for (std::size_t i = 0; i < p.tails.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", p.tails[i].score);
            out << graph.entity_label(p.pair.head) << '\t' << graph.relation_label(p.pair.relation) << '\t'
                << graph.entity_label(p.tails[i].entity) << '\t' << buf << '\t' << (i + 1) << '\n';
        }
    }
}

}  // namespace kgic
