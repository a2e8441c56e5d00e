#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "kgic/error.hpp"
#include "kgic/ingest.hpp"
#include "kgic/rng.hpp"
#include "support.hpp"

using namespace kgic;

namespace {

std::uint64_t fnv1a(std::vector<std::size_t> ids) {
    std::sort(ids.begin(), ids.end());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto id : ids)
        for (int b = 0; b < 8; ++b) {
            h ^= (static_cast<std::uint64_t>(id) >> (8 * b)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    return h;
}

// Heads spread over a few types, some untyped.
KnowledgeGraph typed_graph(std::uint64_t seed, std::size_t n_triples) {
    Rng rng(seed);
    KnowledgeGraph g;
    const std::vector<std::string> types{"person", "city", "film"};
    for (std::size_t i = 0; i < 200; ++i) {
        const auto e = g.intern_entity("e" + std::to_string(i));
        if (i % 7 != 0) g.set_meta(e, {{types[i % 3]}, ""});
    }
    while (g.num_triples() < n_triples)
        g.add_triple("e" + std::to_string(rng.below(200)), "r" + std::to_string(rng.below(8)),
                     "e" + std::to_string(rng.below(200)));
    return g;
}

}  // namespace

TEST_SUITE("ingest") {
    TEST_CASE("triple parsing") {
        std::istringstream in("a\tp\tb\n\nc\tq\td\r\n");
        const auto t = parse_triples(in);
        REQUIRE(t.size() == 2);
        CHECK(t[0] == LabelTriple{"a", "p", "b"});
        CHECK(t[1] == LabelTriple{"c", "q", "d"});

        std::istringstream bad("a\tp\tb\nx\ty\n");
        try {
            parse_triples(bad);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == 2);
        }
        std::istringstream empty_field("a\t\tb\n");
        CHECK_THROWS_AS(parse_triples(empty_field), ParseError);
    }

    TEST_CASE("metadata parsing keeps type order and tabs in descriptions") {
        std::istringstream in("a\tcity,capital\tBig\tplace\nb\t\t\nb\tfilm\tlater\n");
        const auto m = parse_metadata(in);
        CHECK(m.at("a").types == std::vector<std::string>{"city", "capital"});
        CHECK(m.at("a").description == "Big\tplace");
        CHECK(m.at("b").types == std::vector<std::string>{"film"});
        CHECK(m.at("b").description == "later");
        std::istringstream bad("a\n");
        CHECK_THROWS_AS(parse_metadata(bad), ParseError);
    }

    TEST_CASE("build_graph dedups and reports counts") {
        std::vector<LabelTriple> t{{"a", "p", "b"}, {"a", "p", "b"}, {"b", "p", "c"}};
        std::map<std::string, EntityMeta> meta{{"a", {{"x"}, "A"}}, {"ghost", {{"y"}, "G"}}};
        IngestStats stats;
        const auto g = build_graph(t, meta, &stats);
        CHECK(stats.lines == 3);
        CHECK(stats.duplicates == 1);
        CHECK(g.num_triples() == 2);
        CHECK_FALSE(g.find_entity("ghost"));
        CHECK(g.meta(*g.find_entity("a")).description == "A");
    }

    TEST_CASE("toy fixture loads") {
        const auto g = test::load_fixture_graph("toy");
        CHECK(g.num_entities() == 10);
        CHECK(g.num_relations() == 4);
        CHECK(g.num_triples() == 15);
        CHECK(g.primary_type(*g.find_entity("paris")) == "city");
    }

    TEST_CASE("ratios are validated") {
        CHECK_NOTHROW(SplitRatios{}.validate());
        CHECK_THROWS_AS((SplitRatios{0.8, 0.2, 0.0}.validate()), Error);
        CHECK_THROWS_AS((SplitRatios{0.5, 0.2, 0.2}.validate()), Error);
    }

    TEST_CASE("split is a deterministic partition") {
        const auto g = typed_graph(1, 1500);
        const auto a = stratified_split(g, {}, 7);
        const auto b = stratified_split(g, {}, 7);
        CHECK(a == b);
        CHECK(split_fingerprint(a) == split_fingerprint(b));
        const auto c = stratified_split(g, {}, 8);
        CHECK(split_fingerprint(a) != split_fingerprint(c));

        std::vector<int> seen(g.num_triples(), 0);
        for (const auto* part : {&a.train, &a.valid, &a.test}) {
            CHECK(std::is_sorted(part->begin(), part->end()));
            for (const auto i : *part) ++seen[i];
        }
        CHECK(std::all_of(seen.begin(), seen.end(), [](int x) { return x == 1; }));
        CHECK(leakage_check(a, g.num_triples()).ok());
    }

    TEST_CASE("stratification keeps each type's share within two points") {
        for (std::uint64_t seed : {1, 2, 3}) {
            const auto g = typed_graph(seed, 2000);
            const SplitRatios ratios{0.7, 0.15, 0.15};
            const auto s = stratified_split(g, ratios, seed * 13);
            std::map<std::string, std::array<std::size_t, 3>> by_type;
            const auto count = [&](const std::vector<std::size_t>& part, int slot) {
                for (const auto i : part) {
                    auto t = g.primary_type(g.triple(i).head);
                    ++by_type[std::string(t.empty() ? kUntypedClass : t)][slot];
                }
            };
            count(s.train, 0);
            count(s.valid, 1);
            count(s.test, 2);
            for (const auto& [type, c] : by_type) {
                const double n = double(c[0] + c[1] + c[2]);
                if (n < 50) continue;
                CHECK(std::abs(c[0] / n - ratios.train) <= 0.02);
                CHECK(std::abs(c[1] / n - ratios.valid) <= 0.02);
                CHECK(std::abs(c[2] / n - ratios.test) <= 0.02);
            }
        }
    }

    TEST_CASE("small groups go to train") {
        KnowledgeGraph g;
        g.add_triple("a", "p", "b");
        g.add_triple("a", "q", "b");
        const auto s = stratified_split(g, {}, 0);
        CHECK(s.train.size() == 2);
        CHECK(s.valid.empty());
        CHECK(s.test.empty());
    }

    TEST_CASE("fingerprint is FNV-1a over sorted train indices") {
        const std::vector<std::size_t> ids{5, 1, 300, 2};
        CHECK(split_fingerprint(ids) == fnv1a(ids));
        CHECK(split_fingerprint(std::vector<std::size_t>{}) == 0xcbf29ce484222325ULL);
        CHECK(fingerprint_hex(0xabcULL) == "0000000000000abc");
    }

    TEST_CASE("leakage check") {
        SplitSet ok{{0, 1}, {2}, {3}};
        CHECK(leakage_check(ok, 4).ok());

        SplitSet dup{{0, 1}, {2}, {1, 3}};
        const auto r = leakage_check(dup, 4);
        REQUIRE(r.violations.size() == 1);
        CHECK(r.violations[0].find("triple 1") != std::string::npos);

        SplitSet missing{{0}, {2}, {3}};
        CHECK_FALSE(leakage_check(missing, 4).ok());
        SplitSet out_of_range{{0, 1, 9}, {2}, {3}};
        CHECK_FALSE(leakage_check(out_of_range, 4).ok());

        const SplitSet other{{0, 2}, {1}, {3}};
        const std::vector<StageFingerprint> stages{{"stage-two", split_fingerprint(other)}};
        const auto leak = leakage_check(ok, 4, stages);
        REQUIRE(leak.violations.size() == 1);
        CHECK(leak.violations[0].find("split fingerprint mismatch") != std::string::npos);
        const std::vector<StageFingerprint> same{{"stage-two", split_fingerprint(ok)}};
        CHECK(leakage_check(ok, 4, same).ok());
    }

    TEST_CASE("split files round trip and are verified") {
        const auto g = typed_graph(4, 300);
        const auto s = stratified_split(g, {}, 3);
        std::stringstream buf;
        save_split(buf, s);
        CHECK(load_split(buf) == s);

        std::string text = buf.str();
        const auto pos = text.find("\ttrain");
        text.replace(pos, 6, "\ttest");
        std::istringstream tampered(text);
        CHECK_THROWS_AS(load_split(tampered), Error);

        const auto toy = test::toy_split();
        CHECK(toy.test == std::vector<std::size_t>{6, 7, 11, 12, 14});
        CHECK(toy.valid == std::vector<std::size_t>{13});
        CHECK(toy.train.size() == 9);
    }
}
