#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "kgic/ingest.hpp"

namespace test {

inline std::filesystem::path fixture(const std::string& rel) { return std::filesystem::path(KGIC_FIXTURE_DIR) / rel; }

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

inline kgic::KnowledgeGraph load_fixture_graph(const std::string& name) {
    kgic::DatasetConfig cfg;
    cfg.triples_paths = {fixture(name + "/triples.tsv")};
    cfg.metadata_path = fixture(name + "/meta.tsv");
    return kgic::load_dataset(cfg);
}

inline kgic::SplitSet toy_split() {
    std::ifstream in(fixture("toy/split.tsv"));
    return kgic::load_split(in);
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("kgic_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace test
