#include "kgic/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "kgic/error.hpp"
#include "kgic/rng.hpp"
#include "strings.hpp"

namespace kgic {

std::vector<LabelTriple> parse_triples(std::istream& in) {
    std::vector<LabelTriple> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (str::trim(line).empty()) continue;
        const auto fields = str::split(line, '\t');
        if (fields.size() != 3)
            throw ParseError(line_no, "expected 3 tab-separated fields, got " + std::to_string(fields.size()));
        LabelTriple t{std::string(str::trim(fields[0])), std::string(str::trim(fields[1])),
                      std::string(str::trim(fields[2]))};
        if (t.head.empty() || t.relation.empty() || t.tail.empty())
            throw ParseError(line_no, "empty field");
        out.push_back(std::move(t));
    }
    return out;
}

std::map<std::string, EntityMeta> parse_metadata(std::istream& in) {
    std::map<std::string, EntityMeta> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (str::trim(line).empty()) continue;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find('\t');
        const auto second = first == std::string::npos ? first : line.find('\t', first + 1);
        if (second == std::string::npos)
            throw ParseError(line_no, "expected entity<TAB>types<TAB>description");
        const auto entity = str::trim(std::string_view(line).substr(0, first));
        if (entity.empty()) throw ParseError(line_no, "empty entity label");
        EntityMeta meta;
        for (auto type : str::split(std::string_view(line).substr(first + 1, second - first - 1), ',')) {
            type = str::trim(type);
            if (!type.empty()) meta.types.emplace_back(type);
        }
        meta.description = std::string(str::trim(std::string_view(line).substr(second + 1)));
        out[std::string(entity)] = std::move(meta);
    }
    return out;
}

void SplitRatios::validate() const {
    if (!(train > 0 && valid > 0 && test > 0))
        throw Error("split ratios must all be positive");
    if (std::abs(train + valid + test - 1.0) > 1e-9)
        throw Error("split ratios must sum to 1");
}

KnowledgeGraph build_graph(std::span<const LabelTriple> triples,
                           const std::map<std::string, EntityMeta>& meta, IngestStats* stats) {
    KnowledgeGraph g;
    std::size_t dups = 0;
    for (const auto& t : triples)
        if (!g.add_triple(t.head, t.relation, t.tail)) ++dups;
    for (const auto& [label, m] : meta)
        if (auto e = g.find_entity(label)) g.set_meta(*e, m);
    if (stats) {
        stats->lines = triples.size();
        stats->duplicates = dups;
    }
    return g;
}

KnowledgeGraph load_dataset(const DatasetConfig& config, IngestStats* stats) {
    std::vector<LabelTriple> triples;
    for (const auto& path : config.triples_paths) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open " + path.string());
        try {
            auto part = parse_triples(in);
            triples.insert(triples.end(), std::make_move_iterator(part.begin()),
                           std::make_move_iterator(part.end()));
        } catch (const ParseError& e) {
            throw Error(path.string() + ": " + e.what());
        }
    }
    std::map<std::string, EntityMeta> meta;
    if (config.metadata_path) {
        std::ifstream in(*config.metadata_path);
        if (!in) throw Error("cannot open " + config.metadata_path->string());
        try {
            meta = parse_metadata(in);
        } catch (const ParseError& e) {
            throw Error(config.metadata_path->string() + ": " + e.what());
        }
    }
    return build_graph(triples, meta, stats);
}

SplitSet stratified_split(const KnowledgeGraph& graph, const SplitRatios& ratios, std::uint64_t seed) {
    ratios.validate();
    auto order = graph.all_triple_indices();
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));

    std::map<std::string, std::vector<std::size_t>> groups;
    for (const auto id : order) {
        auto type = graph.primary_type(graph.triple(id).head);
        groups[std::string(type.empty() ? kUntypedClass : type)].push_back(id);
    }

    SplitSet split;
    for (const auto& [type, ids] : groups) {
        const auto n = ids.size();
        if (n < 3) {
            split.train.insert(split.train.end(), ids.begin(), ids.end());
            continue;
        }
        auto n_valid = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios.valid));
        auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios.test));
        n_valid = std::min(n_valid, n);
        n_test = std::min(n_test, n - n_valid);
        const auto n_train = n - n_valid - n_test;
        split.train.insert(split.train.end(), ids.begin(), ids.begin() + n_train);
        split.valid.insert(split.valid.end(), ids.begin() + n_train, ids.begin() + n_train + n_valid);
        split.test.insert(split.test.end(), ids.begin() + n_train + n_valid, ids.end());
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.valid.begin(), split.valid.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

std::uint64_t split_fingerprint(std::span<const std::size_t> train) {
    std::vector<std::size_t> sorted(train.begin(), train.end());
    std::sort(sorted.begin(), sorted.end());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto id : sorted) {
        auto v = static_cast<std::uint64_t>(id);
        for (int b = 0; b < 8; ++b) {
            h ^= v & 0xff;
            h *= 0x100000001b3ULL;
            v >>= 8;
        }
    }
    return h;
}

std::uint64_t split_fingerprint(const SplitSet& split) { return split_fingerprint(split.train); }

std::string fingerprint_hex(std::uint64_t fp) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fp));
    return buf;
}

LeakageReport leakage_check(const SplitSet& split, std::size_t num_triples,
                            std::span<const StageFingerprint> stages) {
    LeakageReport report;
    // 0 = unassigned, otherwise bitmask of splits holding the index
    std::vector<std::uint8_t> owner(num_triples, 0);
    const std::pair<const std::vector<std::size_t>*, const char*> parts[] = {
        {&split.train, "train"}, {&split.valid, "valid"}, {&split.test, "test"}};
    for (std::size_t p = 0; p < 3; ++p) {
        for (const auto id : *parts[p].first) {
            if (id >= num_triples) {
                report.violations.push_back("triple " + std::to_string(id) + " in " + parts[p].second +
                                            " is out of range");
                continue;
            }
            owner[id] |= static_cast<std::uint8_t>(1u << p);
        }
    }
    for (std::size_t id = 0; id < num_triples; ++id) {
        const auto mask = owner[id];
        if (mask == 0) {
            report.violations.push_back("triple " + std::to_string(id) + " is in no split");
        } else if (mask & (mask - 1)) {
            std::string where;
            for (std::size_t p = 0; p < 3; ++p)
                if (mask & (1u << p)) where += std::string(where.empty() ? "" : "+") + parts[p].second;
            report.violations.push_back("triple " + std::to_string(id) + " appears in " + where);
        }
    }
    const auto fp = split_fingerprint(split);
    for (const auto& s : stages) {
        if (s.fingerprint != fp)
            report.violations.push_back("split fingerprint mismatch: stage '" + s.stage + "' trained on " +
                                        fingerprint_hex(s.fingerprint) + ", split is " + fingerprint_hex(fp));
    }
    return report;
}

void save_split(std::ostream& out, const SplitSet& split) {
    out << "# kgic split v1\n";
    out << "# fingerprint " << fingerprint_hex(split_fingerprint(split)) << '\n';
    out << "# sizes " << split.train.size() << ' ' << split.valid.size() << ' ' << split.test.size() << '\n';
    for (const auto id : split.train) out << id << "\ttrain\n";
    for (const auto id : split.valid) out << id << "\tvalid\n";
    for (const auto id : split.test) out << id << "\ttest\n";
    if (!out) throw Error("failed to write split");
}

SplitSet load_split(std::istream& in) {
    SplitSet split;
    std::optional<std::string> recorded;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto s = str::trim(line);
        if (s.empty()) continue;
        if (s.front() == '#') {
            constexpr std::string_view key = "# fingerprint ";
            if (s.starts_with(key)) recorded = std::string(str::trim(s.substr(key.size())));
            continue;
        }
        const auto fields = str::split(s, '\t');
        if (fields.size() != 2) throw ParseError(line_no, "expected <index><TAB><split>");
        std::size_t id = 0;
        try {
            id = std::stoull(std::string(fields[0]));
        } catch (const std::exception&) {
            throw ParseError(line_no, "bad triple index");
        }
        if (fields[1] == "train") split.train.push_back(id);
        else if (fields[1] == "valid") split.valid.push_back(id);
        else if (fields[1] == "test") split.test.push_back(id);
        else throw ParseError(line_no, "unknown split name '" + std::string(fields[1]) + "'");
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.valid.begin(), split.valid.end());
    std::sort(split.test.begin(), split.test.end());
    if (recorded && *recorded != fingerprint_hex(split_fingerprint(split)))
        throw Error("split file fingerprint " + *recorded + " does not match its contents");
    return split;
}

}  // namespace kgic
