// View-specific sub-set selection from per-sample scores.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mae/scoring.hpp"

namespace mae {

enum class RankDirection { HigherBetter, LowerBetter };

// Con and Spe keep high scores; Ent keeps low ones.
RankDirection default_direction(ScoreMethod method);

struct ViewSubset {
    std::string method;          // "con", "ent", "spe" or "combined"
    double ratio = 1.0;
    std::vector<int64_t> ids;    // rank order, best first
};

// Sorts by score in the given direction (ties broken by smaller sample id)
// and keeps the first round(ratio * N) ids, rounding half up.
ViewSubset rank_and_select(const std::vector<SampleScore>& scores, double ratio,
                           RankDirection direction);

enum class CombineMode { Union, Intersection };

// Set union or intersection of the subsets' ids, result ordered by
// ascending id. An empty intersection is valid; a warning is printed.
ViewSubset combine_subsets(const std::vector<ViewSubset>& subsets, CombineMode mode);

}  // namespace mae
