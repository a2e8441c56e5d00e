#pragma once
// Brute-force reference implementations. Deliberately naive: plain loops,
// std::set/std::sort, no code shared with the library under test.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace oracle {

using Grid = std::vector<std::vector<int>>;

struct Prf {
    double p = 0, r = 0, f1 = 0;
};

inline Prf micro_prf(const Grid& pred, const Grid& gold) {
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        for (std::size_t j = 0; j < pred[i].size(); ++j) {
            if (pred[i][j] && gold[i][j]) ++tp;
            if (pred[i][j] && !gold[i][j]) ++fp;
            if (!pred[i][j] && gold[i][j]) ++fn;
        }
    Prf out;
    out.p = tp + fp == 0 ? 0.0 : double(tp) / double(tp + fp);
    out.r = tp + fn == 0 ? 0.0 : double(tp) / double(tp + fn);
    out.f1 = out.p + out.r == 0 ? 0.0 : 2 * out.p * out.r / (out.p + out.r);
    return out;
}

inline double hits_at_k(const std::vector<std::size_t>& ranks, std::size_t k) {
    std::size_t n = 0;
    for (auto r : ranks)
        if (r <= k) ++n;
    return double(n) / double(ranks.size());
}

using Pair = std::pair<std::uint32_t, std::uint32_t>;
using Fact = std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>;

inline double pair_precision(const std::vector<Pair>& predicted, const std::vector<Fact>& gold) {
    std::set<Pair> pred(predicted.begin(), predicted.end());
    if (pred.empty()) return 0.0;
    std::set<Pair> truth;
    for (auto& [h, r, t] : gold) truth.insert({h, r});
    std::set<Pair> both;
    std::set_intersection(pred.begin(), pred.end(), truth.begin(), truth.end(), std::inserter(both, both.end()));
    return double(both.size()) / double(pred.size());
}

inline double coverage(const std::vector<Pair>& predicted, const std::vector<Fact>& gold) {
    if (gold.empty()) return 0.0;
    std::set<Pair> pred(predicted.begin(), predicted.end());
    std::size_t n = 0;
    for (auto& [h, r, t] : gold)
        if (pred.count({h, r})) ++n;
    return double(n) / double(gold.size());
}

// Sorts every candidate (score desc, id asc) after dropping `filtered`
// entries other than `gold`, and returns gold's 1-based position.
inline std::size_t rank(const std::vector<double>& scores, std::uint32_t gold, const std::set<std::uint32_t>& filtered) {
    std::vector<std::pair<double, std::uint32_t>> c;
    for (std::uint32_t e = 0; e < scores.size(); ++e)
        if (e == gold || !filtered.count(e)) c.push_back({-scores[e], e});
    std::sort(c.begin(), c.end());
    for (std::size_t i = 0; i < c.size(); ++i)
        if (c[i].second == gold) return i + 1;
    return 0;
}

// ---- Sequence enumeration --------------------------------------------------

struct Seq {
    std::vector<std::uint32_t> tokens;  // END included when finished
    double log_prob = 0;
    bool finished = false;
};

// Next-token log-probs for a prefix.
using Table = std::function<std::vector<double>(const std::vector<std::uint32_t>&)>;

inline bool seq_before(const Seq& a, const Seq& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.tokens < b.tokens;
}

// Every sequence the unpruned search can end with: finished ones
// (min_len..max_len-1 tokens, then END) and max_len-token unfinished ones.
// Zero-probability steps are not expanded. Finished first, each group by
// score then token order.
inline std::vector<Seq> enumerate(const Table& table, std::size_t vocab, std::uint32_t end, std::size_t max_len,
                                  std::size_t min_len) {
    std::vector<Seq> finished, open;
    std::function<void(const Seq&)> grow = [&](const Seq& s) {
        if (s.tokens.size() == max_len) {
            open.push_back(s);
            return;
        }
        const auto lp = table(s.tokens);
        for (std::uint32_t v = 0; v < vocab; ++v) {
            if (std::isinf(lp[v])) continue;
            Seq n = s;
            n.tokens.push_back(v);
            n.log_prob += lp[v];
            if (v == end) {
                if (s.tokens.size() < min_len) continue;
                n.finished = true;
                finished.push_back(n);
            } else {
                grow(n);
            }
        }
    };
    grow(Seq{});
    std::sort(finished.begin(), finished.end(), seq_before);
    std::sort(open.begin(), open.end(), seq_before);
    finished.insert(finished.end(), open.begin(), open.end());
    return finished;
}

// Entity names as token strings; `table` is renormalized over the tokens
// that continue some name (plus END where a name ends). Only sequences that
// spell a whole name are returned.
inline std::vector<Seq> enumerate_names(const Table& table, std::uint32_t end,
                                        const std::vector<std::vector<std::uint32_t>>& names, std::size_t max_len,
                                        std::size_t min_len) {
    const auto is_name = [&](const std::vector<std::uint32_t>& p) {
        return std::find(names.begin(), names.end(), p) != names.end();
    };
    const auto next_tokens = [&](const std::vector<std::uint32_t>& p) {
        std::set<std::uint32_t> out;
        for (const auto& n : names)
            if (n.size() > p.size() && std::equal(p.begin(), p.end(), n.begin())) out.insert(n[p.size()]);
        return out;
    };
    std::vector<Seq> finished, open;
    std::function<void(const Seq&)> grow = [&](const Seq& s) {
        if (s.tokens.size() == max_len) {
            if (is_name(s.tokens)) open.push_back(s);
            return;
        }
        const auto lp = table(s.tokens);
        const auto nexts = next_tokens(s.tokens);
        const bool may_end = is_name(s.tokens) && s.tokens.size() >= min_len;
        double z = 0;
        for (auto t : nexts) z += std::exp(lp[t]);
        if (may_end) z += std::exp(lp[end]);
        if (z == 0) return;
        for (auto t : nexts) {
            if (std::isinf(lp[t])) continue;
            Seq n = s;
            n.tokens.push_back(t);
            n.log_prob += lp[t] - std::log(z);
            grow(n);
        }
        if (may_end && !std::isinf(lp[end])) {
            Seq n = s;
            n.tokens.push_back(end);
            n.log_prob += lp[end] - std::log(z);
            n.finished = true;
            finished.push_back(n);
        }
    };
    grow(Seq{});
    std::sort(finished.begin(), finished.end(), seq_before);
    std::sort(open.begin(), open.end(), seq_before);
    finished.insert(finished.end(), open.begin(), open.end());
    return finished;
}

}  // namespace oracle
