#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "kgic/error.hpp"
#include "kgic/kge.hpp"
#include "oracles.hpp"

using namespace kgic;

namespace {

std::vector<Triple> chain(std::size_t n) {
    std::vector<Triple> t;
    for (std::size_t i = 0; i + 1 < n; ++i) t.push_back({entity_at(i), relation_at(0), entity_at(i + 1)});
    return t;
}

KgeConfig small(KgeModel m) {
    auto c = KgeConfig::defaults(m);
    c.dim = 8;
    c.negatives = 4;
    c.epochs = 20;
    c.batch_size = 4;
    c.seed = 3;
    return c;
}

}  // namespace

TEST_SUITE("kge") {
    TEST_CASE("defaults and validation") {
        CHECK(KgeConfig::defaults(KgeModel::transe).margin == 5.0);
        CHECK(KgeConfig::defaults(KgeModel::rotate).margin == 12.0);
        auto c = KgeConfig::defaults(KgeModel::rotate);
        c.dim = 7;
        CHECK_THROWS_AS(c.validate(), Error);
        auto d = KgeConfig::defaults(KgeModel::transe);
        d.norm = 3;
        CHECK_THROWS_AS(d.validate(), Error);
        d.norm = 1;
        d.learning_rate = 0;
        CHECK_THROWS_AS(d.validate(), Error);
        CHECK(parse_kge_model("rotate") == KgeModel::rotate);
        CHECK_THROWS(parse_kge_model("distmult"));
        CHECK(parse_negative_mode("both") == NegativeMode::both);
    }

    TEST_CASE("initialisation ranges") {
        auto c = KgeConfig::defaults(KgeModel::transe);
        c.dim = 16;
        const auto t = init_embeddings(c, 5, 2);
        const double bound = 6.0 / std::sqrt(16.0);
        for (const double x : t.entities) CHECK(std::abs(x) <= bound);
        c.model = KgeModel::rotate;
        const auto r = init_embeddings(c, 5, 2);
        CHECK(r.relations.size() == 2 * 8);
        for (const double x : r.relations) CHECK(std::abs(x) <= M_PI);
    }

    TEST_CASE("transe score is translation invariant") {
        auto c = KgeConfig::defaults(KgeModel::transe);
        c.dim = 6;
        for (int norm : {1, 2}) {
            c.norm = norm;
            auto t = init_embeddings(c, 6, 2);
            auto shifted = t;
            for (std::size_t e = 0; e < 6; ++e)
                for (std::size_t j = 0; j < 6; ++j) shifted.entity(entity_at(e))[j] += 0.37 * double(j + 1);
            for (std::size_t h = 0; h < 6; ++h)
                for (std::size_t tt = 0; tt < 6; ++tt)
                    CHECK(std::abs(score(t, entity_at(h), relation_at(1), entity_at(tt)) -
                                   score(shifted, entity_at(h), relation_at(1), entity_at(tt))) < 1e-9);
        }
    }

    TEST_CASE("score_tails agrees with score") {
        for (auto m : {KgeModel::transe, KgeModel::rotate}) {
            auto c = KgeConfig::defaults(m);
            c.dim = 6;
            const auto t = init_embeddings(c, 7, 2);
            const auto s = score_tails(t, entity_at(2), relation_at(1));
            for (std::size_t e = 0; e < 7; ++e)
                CHECK(s[e] == doctest::Approx(score(t, entity_at(2), relation_at(1), entity_at(e))).epsilon(1e-12));
        }
    }

    TEST_CASE("negative sampling") {
        const Triple t{entity_at(1), relation_at(0), entity_at(2)};
        const auto s = sample_negatives(t, 10, NegativeMode::tail, 5, 1);
        CHECK(s.triples.size() == 10);
        for (const auto& n : s.triples) {
            CHECK(n.head == t.head);
            CHECK(n.relation == t.relation);
        }
        const auto b = sample_negatives(t, 4, NegativeMode::both, 5, 1);
        CHECK(b.triples[1].tail == t.tail);
        const Triple self{entity_at(0), relation_at(0), entity_at(0)};
        CHECK(sample_negatives(self, 3, NegativeMode::tail, 1, 1).degenerate);

        TripleSet reject{{entity_at(1), relation_at(0), entity_at(3)}};
        for (const auto& n : sample_negatives(t, 50, NegativeMode::tail, 5, 2, &reject).triples)
            CHECK(n.tail != entity_at(3));
        CHECK(sample_negatives(t, 10, NegativeMode::tail, 5, 1).triples == s.triples);
    }

    TEST_CASE("hits_at_k") {
        const std::vector<std::size_t> ranks{1, 3, 12};
        CHECK(hits_at_k(ranks, 1) == doctest::Approx(1.0 / 3));
        CHECK(hits_at_k(ranks, 5) == doctest::Approx(2.0 / 3));
        CHECK(hits_at_k(ranks, 10) == doctest::Approx(2.0 / 3));
        CHECK(hits_at_k(std::vector<std::size_t>{1, 1}, 1) == 1.0);
        CHECK_THROWS(hits_at_k(std::vector<std::size_t>{}, 1));
        CHECK_THROWS(hits_at_k(ranks, 0));
        double last = 0;
        for (std::size_t k = 1; k < 15; ++k) {
            CHECK(hits_at_k(ranks, k) >= last);
            last = hits_at_k(ranks, k);
        }
    }

    TEST_CASE("rank ties are broken by handle") {
        const std::vector<double> scores{1.0, 2.0, 2.0, 0.5};
        CHECK(rank_from_scores(scores, entity_at(1), {}) == 1);
        CHECK(rank_from_scores(scores, entity_at(2), {}) == 2);
        const std::vector<EntityId> filtered{entity_at(1)};
        CHECK(rank_from_scores(scores, entity_at(2), filtered) == 1);
        CHECK(rank_from_scores(scores, entity_at(3), filtered) == 3);
    }

    TEST_CASE("rank_tail matches brute force") {
        Rng rng(17);
        for (int c = 0; c < 100; ++c) {
            auto cfg = KgeConfig::defaults(rng.below(2) ? KgeModel::transe : KgeModel::rotate);
            cfg.dim = 4;
            cfg.seed = rng.next();
            const std::size_t n = 2 + rng.below(20);
            const auto table = init_embeddings(cfg, n, 2);
            const auto h = entity_at(rng.below(n));
            const auto gold = entity_at(rng.below(n));
            TailFilter known;
            std::set<std::uint32_t> filt;
            for (std::size_t i = 0; i < n; ++i)
                if (rng.uniform() < 0.3) {
                    known.add({h, relation_at(1), entity_at(i)});
                    filt.insert(std::uint32_t(i));
                }
            std::vector<double> scores(n);
            for (std::size_t e = 0; e < n; ++e) scores[e] = score(table, h, relation_at(1), entity_at(e));
            CHECK(rank_tail(table, h, relation_at(1), gold, &known) == oracle::rank(scores, index(gold), filt));
            CHECK(rank_tail(table, h, relation_at(1), gold, nullptr) == oracle::rank(scores, index(gold), {}));
        }
    }

    TEST_CASE("training is deterministic and rotate phases stay unit modulus") {
        const auto train = chain(6);
        auto c = small(KgeModel::rotate);
        double worst = 0;
        const auto a = train_kge(c, 6, 1, train, [&](const EmbeddingTable& t, std::size_t) {
            for (std::size_t j = 0; j < t.relation_width(); ++j)
                worst = std::max(worst, std::abs(std::abs(t.rotation(relation_at(0), j)) - 1.0));
        });
        CHECK(worst < 1e-9);
        const auto b = train_kge(c, 6, 1, train);
        CHECK(a.table == b.table);
        CHECK(a.epoch_loss.size() == c.epochs);
    }

    TEST_CASE("transe learns a chain") {
        const auto train = chain(6);
        auto c = small(KgeModel::transe);
        c.epochs = 300;
        c.learning_rate = 0.05;
        const auto r = train_kge(c, 6, 1, train);
        CHECK(r.epoch_loss.back() < r.epoch_loss.front());
        for (const auto& t : train)
            for (std::size_t e = 0; e < 6; ++e)
                if (entity_at(e) != t.tail) CHECK(score(r.table, t.head, t.relation, t.tail) > score(r.table, t.head, t.relation, entity_at(e)));
    }

    TEST_CASE("divergence is reported") {
        auto c = small(KgeModel::transe);
        c.learning_rate = 1e308;
        c.epochs = 50;
        CHECK_THROWS_AS(train_kge(c, 6, 1, chain(6)), DivergenceError);
    }

    TEST_CASE("tables round trip") {
        auto c = small(KgeModel::rotate);
        auto t = init_embeddings(c, 4, 3);
        t.train_fingerprint = 0x1234;
        std::stringstream buf;
        save_table(buf, t);
        CHECK(load_table(buf) == t);
        std::stringstream junk("nope");
        CHECK_THROWS_AS(load_table(junk), Error);
    }
}
