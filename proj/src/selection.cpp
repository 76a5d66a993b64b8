#include "mae/selection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <unordered_set>

namespace mae {

RankDirection default_direction(ScoreMethod method) {
    return method == ScoreMethod::Ent ? RankDirection::LowerBetter
                                      : RankDirection::HigherBetter;
}

ViewSubset rank_and_select(const std::vector<SampleScore>& scores, double ratio,
                           RankDirection direction) {
    require(ratio > 0.0 && ratio <= 1.0, "selection ratio must be in (0, 1]");
    require(!scores.empty(), "cannot select from an empty score list");

    std::unordered_set<int64_t> seen;
    for (const auto& s : scores) {
        require(seen.insert(s.sample_id).second,
                "sample scored more than once: " + std::to_string(s.sample_id));
    }

    std::vector<SampleScore> ranked = scores;
    bool higher = direction == RankDirection::HigherBetter;
    std::sort(ranked.begin(), ranked.end(), [higher](const SampleScore& a, const SampleScore& b) {
        if (a.value != b.value) return higher ? a.value > b.value : a.value < b.value;
        return a.sample_id < b.sample_id;
    });

    int64_t n = static_cast<int64_t>(ranked.size());
    auto keep = static_cast<int64_t>(std::floor(ratio * static_cast<double>(n) + 0.5));
    keep = std::clamp<int64_t>(keep, 0, n);

    ViewSubset subset;
    subset.method = method_name(ranked.front().method);
    subset.ratio = ratio;
    subset.ids.reserve(static_cast<size_t>(keep));
    for (int64_t i = 0; i < keep; ++i) subset.ids.push_back(ranked[static_cast<size_t>(i)].sample_id);
    return subset;
}

ViewSubset combine_subsets(const std::vector<ViewSubset>& subsets, CombineMode mode) {
    require(subsets.size() >= 2, "combining needs at least two subsets");

    std::set<int64_t> acc(subsets[0].ids.begin(), subsets[0].ids.end());
    for (size_t i = 1; i < subsets.size(); ++i) {
        std::set<int64_t> other(subsets[i].ids.begin(), subsets[i].ids.end());
        if (mode == CombineMode::Union) {
            acc.insert(other.begin(), other.end());
        } else {
            std::set<int64_t> kept;
            for (int64_t id : acc) {
                if (other.count(id)) kept.insert(id);
            }
            acc = std::move(kept);
        }
    }
    if (mode == CombineMode::Intersection && acc.empty()) {
        std::fprintf(stderr, "warning: subset intersection is empty\n");
    }

    ViewSubset out;
    out.method = "combined";
    out.ratio = subsets[0].ratio;
    out.ids.assign(acc.begin(), acc.end());
    return out;
}

}  // namespace mae
