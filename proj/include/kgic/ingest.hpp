#pragma once
// Dataset parsing, seeded stratified splitting and leakage guards.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kgic/graph.hpp"

namespace kgic {

struct LabelTriple {
    std::string head;
    std::string relation;
    std::string tail;

    bool operator==(const LabelTriple&) const = default;
};

// One `head<TAB>relation<TAB>tail` per non-empty line. Throws ParseError.
std::vector<LabelTriple> parse_triples(std::istream& in);

// One `entity<TAB>type1,type2,...<TAB>description` per non-empty line. The
// description is everything after the second tab. Later lines for the same
// entity replace earlier ones.
std::map<std::string, EntityMeta> parse_metadata(std::istream& in);

struct SplitRatios {
    double train = 0.7;
    double valid = 0.15;
    double test = 0.15;

    // Throws unless all positive and summing to 1 (within 1e-9).
    void validate() const;
};

struct DatasetConfig {
    std::vector<std::filesystem::path> triples_paths;
    std::optional<std::filesystem::path> metadata_path;
    SplitRatios ratios;
    std::uint64_t seed = 0;
};

struct IngestStats {
    std::size_t lines = 0;       // triples read before dedup
    std::size_t duplicates = 0;  // dropped as repeats
};

// Interns every triple (deduplicated) and attaches metadata. Metadata for
// labels that never occur in a triple is ignored.
KnowledgeGraph build_graph(std::span<const LabelTriple> triples,
                           const std::map<std::string, EntityMeta>& meta,
                           IngestStats* stats = nullptr);

KnowledgeGraph load_dataset(const DatasetConfig& config, IngestStats* stats = nullptr);

// Stratification class used for untyped heads.
inline constexpr std::string_view kUntypedClass = "⊥";

struct SplitSet {
    std::vector<std::size_t> train;  // each sorted ascending
    std::vector<std::size_t> valid;
    std::vector<std::size_t> test;

    bool operator==(const SplitSet&) const = default;
};

// Shuffles all triples with `seed`, groups them by the head's primary type
// (kUntypedClass when none) keeping shuffled order, and cuts each group into
// train/valid/test. valid and test sizes are round-to-nearest of the ratio;
// train takes the remainder. Groups with fewer than 3 triples go to train.
SplitSet stratified_split(const KnowledgeGraph& graph, const SplitRatios& ratios, std::uint64_t seed);

// 64-bit FNV-1a over the sorted train indices, each as 8 little-endian bytes.
std::uint64_t split_fingerprint(std::span<const std::size_t> train);
std::uint64_t split_fingerprint(const SplitSet& split);
std::string fingerprint_hex(std::uint64_t fp);

// Fingerprint of the train set a downstream stage was fitted on.
struct StageFingerprint {
    std::string stage;
    std::uint64_t fingerprint;
};

struct LeakageReport {
    std::vector<std::string> violations;
    bool ok() const { return violations.empty(); }
};

// Checks that the splits are pairwise disjoint, within range, cover every
// triple, and that every stage was trained on this split's train set.
LeakageReport leakage_check(const SplitSet& split, std::size_t num_triples,
                            std::span<const StageFingerprint> stages = {});

// Text split file: header comments plus one `<index><TAB><train|valid|test>`
// line per triple. load_split verifies the recorded fingerprint.
void save_split(std::ostream& out, const SplitSet& split);
SplitSet load_split(std::istream& in);

}  // namespace kgic
