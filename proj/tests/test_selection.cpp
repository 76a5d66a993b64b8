#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "mae/selection.hpp"

using namespace mae;

namespace {

std::vector<SampleScore> make_scores(const std::vector<double>& values,
                                     ScoreMethod method = ScoreMethod::Con) {
    std::vector<SampleScore> scores;
    for (size_t i = 0; i < values.size(); ++i)
        scores.push_back({static_cast<int64_t>(i), method, values[i]});
    return scores;
}

std::set<int64_t> id_set(const ViewSubset& s) { return {s.ids.begin(), s.ids.end()}; }

}  // namespace

TEST_CASE("rank_and_select keeps round(ratio*N) ids") {
    auto scores = make_scores({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0});
    CHECK(rank_and_select(scores, 0.5, RankDirection::HigherBetter).ids.size() == 5);
    CHECK(rank_and_select(scores, 1.0, RankDirection::HigherBetter).ids.size() == 10);
    // round-half-up: 10 * 0.25 = 2.5 -> 3
    CHECK(rank_and_select(scores, 0.25, RankDirection::HigherBetter).ids.size() == 3);
}

TEST_CASE("rank_and_select orders by direction with id tie-break") {
    auto scores = make_scores({0.9, 0.1, 0.5});
    ViewSubset top = rank_and_select(scores, 2.0 / 3.0, RankDirection::HigherBetter);
    CHECK(top.ids == std::vector<int64_t>{0, 2});
    ViewSubset low = rank_and_select(scores, 2.0 / 3.0, RankDirection::LowerBetter);
    CHECK(low.ids == std::vector<int64_t>{1, 2});

    auto tied = make_scores({0.5, 0.5, 0.5});
    CHECK(rank_and_select(tied, 2.0 / 3.0, RankDirection::HigherBetter).ids ==
          std::vector<int64_t>{0, 1});
}

TEST_CASE("rank_and_select rejects bad input") {
    auto scores = make_scores({0.1, 0.2});
    CHECK_THROWS(rank_and_select(scores, 0.0, RankDirection::HigherBetter));
    CHECK_THROWS(rank_and_select(scores, 1.5, RankDirection::HigherBetter));
    auto dup = make_scores({0.1, 0.2});
    dup.push_back({0, ScoreMethod::Con, 0.3});
    CHECK_THROWS(rank_and_select(dup, 0.5, RankDirection::HigherBetter));
}

TEST_CASE("selection is invariant under monotone score transforms") {
    Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> values;
        for (int i = 0; i < 40; ++i) values.push_back(rng.next_uniform(-3, 3));
        auto scores = make_scores(values);
        std::vector<double> mapped;
        for (double v : values) mapped.push_back(std::exp(0.5 * v) + 7.0);  // strictly increasing
        auto scores2 = make_scores(mapped);
        double ratio = 0.1 + 0.8 * rng.next_real();
        auto a = rank_and_select(scores, ratio, RankDirection::HigherBetter);
        auto b = rank_and_select(scores2, ratio, RankDirection::HigherBetter);
        CHECK(id_set(a) == id_set(b));
    }
}

TEST_CASE("smaller ratios select nested subsets") {
    Rng rng(7);
    std::vector<double> values;
    for (int i = 0; i < 60; ++i) values.push_back(rng.next_uniform(0, 1));
    auto scores = make_scores(values);
    std::set<int64_t> prev;
    for (double ratio : {0.1, 0.3, 0.5, 0.8, 1.0}) {
        auto picked = id_set(rank_and_select(scores, ratio, RankDirection::HigherBetter));
        CHECK(std::includes(picked.begin(), picked.end(), prev.begin(), prev.end()));
        prev = picked;
    }
}

TEST_CASE("lower_better equals higher_better on negated scores") {
    Rng rng(3);
    std::vector<double> values;
    for (int i = 0; i < 30; ++i) values.push_back(rng.next_uniform(-2, 2));
    std::vector<double> negated;
    for (double v : values) negated.push_back(-v);
    auto low = rank_and_select(make_scores(values, ScoreMethod::Ent), 0.4,
                               RankDirection::LowerBetter);
    auto high = rank_and_select(make_scores(negated, ScoreMethod::Ent), 0.4,
                                RankDirection::HigherBetter);
    CHECK(low.ids == high.ids);
}

TEST_CASE("default directions follow the method") {
    CHECK(default_direction(ScoreMethod::Con) == RankDirection::HigherBetter);
    CHECK(default_direction(ScoreMethod::Spe) == RankDirection::HigherBetter);
    CHECK(default_direction(ScoreMethod::Ent) == RankDirection::LowerBetter);
}

TEST_CASE("combine_subsets union and intersection") {
    ViewSubset a{"con", 0.5, {1, 2, 3}};
    ViewSubset b{"spe", 0.5, {2, 3, 4}};
    CHECK(combine_subsets({a, b}, CombineMode::Union).ids == std::vector<int64_t>{1, 2, 3, 4});
    CHECK(combine_subsets({a, b}, CombineMode::Intersection).ids == std::vector<int64_t>{2, 3});
    CHECK(combine_subsets({a, a}, CombineMode::Union).ids == std::vector<int64_t>{1, 2, 3});
    CHECK(combine_subsets({a, a}, CombineMode::Intersection).ids == std::vector<int64_t>{1, 2, 3});
    CHECK(combine_subsets({a, b}, CombineMode::Union).method == "combined");
}

TEST_CASE("empty intersection is a valid empty subset") {
    ViewSubset a{"con", 0.5, {1, 2}};
    ViewSubset b{"spe", 0.5, {3, 4}};
    CHECK(combine_subsets({a, b}, CombineMode::Intersection).ids.empty());
}

TEST_CASE("intersection within sources within union") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> v1, v2;
        for (int i = 0; i < 25; ++i) {
            v1.push_back(rng.next_real());
            v2.push_back(rng.next_real());
        }
        auto a = rank_and_select(make_scores(v1), 0.4, RankDirection::HigherBetter);
        auto b = rank_and_select(make_scores(v2), 0.4, RankDirection::HigherBetter);
        auto inter = id_set(combine_subsets({a, b}, CombineMode::Intersection));
        auto uni = id_set(combine_subsets({a, b}, CombineMode::Union));
        auto sa = id_set(a);
        CHECK(std::includes(sa.begin(), sa.end(), inter.begin(), inter.end()));
        CHECK(std::includes(uni.begin(), uni.end(), sa.begin(), sa.end()));
    }
}
