#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "kgic/error.hpp"
#include "kgic/graph.hpp"
#include "kgic/rng.hpp"
#include "support.hpp"

using namespace kgic;

namespace {

KnowledgeGraph random_graph(std::uint64_t seed, std::size_t entities, std::size_t relations, std::size_t triples) {
    Rng rng(seed);
    KnowledgeGraph g;
    for (std::size_t i = 0; i < triples; ++i)
        g.add_triple("e" + std::to_string(rng.below(entities)), "r" + std::to_string(rng.below(relations)),
                     "e" + std::to_string(rng.below(entities)));
    for (std::size_t i = 0; i < g.num_entities(); i += 2)
        g.set_meta(entity_at(i), {{"t" + std::to_string(i % 3), "u"}, "desc " + std::to_string(i)});
    return g;
}

}  // namespace

TEST_SUITE("graph") {
    TEST_CASE("interning is a bijection with contiguous handles") {
        KnowledgeGraph g;
        CHECK(index(g.intern_entity("a")) == 0);
        CHECK(index(g.intern_entity("b")) == 1);
        CHECK(index(g.intern_entity("a")) == 0);
        CHECK(g.intern("b", HandleKind::entity) == 1);
        CHECK(g.intern("p", HandleKind::relation) == 0);
        CHECK(g.entity_label(entity_at(1)) == "b");
        CHECK(g.find_entity("zz") == std::nullopt);
        CHECK_THROWS_AS(g.intern_entity(""), Error);
        CHECK_THROWS_AS(g.intern_relation(""), Error);
    }

    TEST_CASE("duplicates are dropped and tails get handles") {
        KnowledgeGraph g;
        CHECK(g.add_triple("a", "p", "b"));
        CHECK_FALSE(g.add_triple("a", "p", "b"));
        CHECK(g.add_triple("a", "q", "c"));
        CHECK(g.num_triples() == 2);
        CHECK(g.num_entities() == 3);
        const auto c = *g.find_entity("c");
        CHECK(g.meta(c).types.empty());
        CHECK(g.primary_type(c).empty());
        const auto v = property_vector(g, c, std::vector<std::size_t>{0, 1});
        CHECK(v == std::vector<std::uint8_t>{0, 0});
    }

    TEST_CASE("triples with unknown handles are rejected") {
        KnowledgeGraph g;
        g.add_triple("a", "p", "b");
        CHECK_THROWS_AS(g.add_triple(Triple{entity_at(0), relation_at(0), entity_at(7)}), Error);
        CHECK_THROWS_AS(g.add_triple(Triple{entity_at(0), relation_at(3), entity_at(1)}), Error);
        CHECK_THROWS_AS(property_vector(g, entity_at(9), std::vector<std::size_t>{0}), Error);
    }

    TEST_CASE("primary type is the first listed and classes are first-seen") {
        KnowledgeGraph g;
        const auto a = g.intern_entity("a");
        const auto b = g.intern_entity("b");
        g.set_meta(a, {{"city", "capital"}, "x"});
        g.set_meta(b, {{"capital"}, ""});
        CHECK(g.primary_type(a) == "city");
        CHECK(g.primary_type(b) == "capital");
        CHECK(g.classes().labels() == std::vector<std::string>{"city", "capital"});
    }

    TEST_CASE("indexes agree with the triple set") {
        const auto g = random_graph(3, 30, 5, 300);
        std::size_t total = 0;
        for (std::size_t i = 0; i < g.num_triples(); ++i) {
            const auto& t = g.triple(i);
            const auto by_h = g.by_head(t.head);
            const auto by_hr = g.by_head_relation(t.head, t.relation);
            CHECK(std::find(by_h.begin(), by_h.end(), i) != by_h.end());
            CHECK(std::find(by_hr.begin(), by_hr.end(), i) != by_hr.end());
            CHECK(g.find_triple(t) == i);
        }
        for (std::size_t e = 0; e < g.num_entities(); ++e) {
            for (const auto i : g.by_head(entity_at(e))) CHECK(g.triple(i).head == entity_at(e));
            total += g.by_head(entity_at(e)).size();
            for (std::size_t r = 0; r < g.num_relations(); ++r)
                for (const auto i : g.by_head_relation(entity_at(e), relation_at(r))) {
                    CHECK(g.triple(i).head == entity_at(e));
                    CHECK(g.triple(i).relation == relation_at(r));
                }
        }
        CHECK(total == g.num_triples());
    }

    TEST_CASE("property matrix rows match brute-force relation counts") {
        const auto g = random_graph(11, 25, 6, 200);
        std::vector<std::size_t> subset;
        for (std::size_t i = 0; i < g.num_triples(); i += 3) subset.push_back(i);
        const auto m = property_matrix(g, subset);
        REQUIRE(m.rows == g.num_entities());
        REQUIRE(m.cols == g.num_relations());
        std::map<std::size_t, std::set<std::size_t>> brute;
        for (const auto i : subset) brute[index(g.triple(i).head)].insert(index(g.triple(i).relation));
        for (std::size_t e = 0; e < m.rows; ++e) {
            std::size_t sum = 0;
            for (const auto x : m.row(e)) sum += x;
            CHECK(sum == brute[e].size());
            const auto v = property_vector(g, entity_at(e), subset);
            CHECK(std::equal(v.begin(), v.end(), m.row(e).begin()));
        }
        const auto empty = property_matrix(g, {});
        CHECK(std::all_of(empty.data.begin(), empty.data.end(), [](auto x) { return x == 0; }));
    }

    TEST_CASE("snapshot round trip preserves triples and metadata") {
        const auto g = random_graph(5, 20, 4, 80);
        std::stringstream buf;
        g.save(buf);
        const auto h = KnowledgeGraph::load(buf);
        CHECK(h.entities().labels() == g.entities().labels());
        CHECK(h.relations().labels() == g.relations().labels());
        CHECK(h.triples() == g.triples());
        for (std::size_t e = 0; e < g.num_entities(); ++e) CHECK(h.meta(entity_at(e)) == g.meta(entity_at(e)));
        CHECK(h.classes().labels() == g.classes().labels());
    }

    TEST_CASE("truncated snapshot is rejected") {
        const auto g = random_graph(6, 10, 3, 30);
        std::stringstream buf;
        g.save(buf);
        auto bytes = buf.str();
        bytes.resize(bytes.size() / 2);
        std::stringstream cut(bytes);
        CHECK_THROWS_AS(KnowledgeGraph::load(cut), Error);
        std::stringstream junk("not a snapshot");
        CHECK_THROWS_AS(KnowledgeGraph::load(junk), Error);
    }
}
