// Deterministic synthetic dialogue corpus: a controlled mix of generic
// many-to-one responses, entity-bearing specific responses, and
// query-echoing consistent responses.
#pragma once

#include <cstdint>
#include <string>

#include "mae/common.hpp"

namespace mae {

struct SyntheticSpec {
    int64_t train_pairs = 2000;
    int64_t valid_pairs = 200;
    int64_t test_pairs = 200;
    uint64_t seed = 7;
    // Mixture weights; normalized internally.
    double generic_weight = 0.30;
    double specific_weight = 0.35;
    double echo_weight = 0.35;
};

// Writes train.tsv, valid.tsv and test.tsv under `dir`.
void write_synthetic_corpus(const std::string& dir, const SyntheticSpec& spec);

}  // namespace mae
