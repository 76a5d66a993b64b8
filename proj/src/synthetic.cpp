#include "mae/synthetic.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <vector>

namespace mae {

namespace {

const std::vector<std::string> kEntityPrefix = {
    "fern", "marl", "gold", "ash", "bram", "cedar", "dun", "elm",
    "haw", "iron", "lark", "mill", "north", "oak", "pine",
};
const std::vector<std::string> kEntitySuffix = {
    "gate", "brook", "field", "haven", "mere", "ridge", "stone", "wick",
};
const std::vector<std::string> kPlaces = {
    "harborside", "oldtown", "riverbank", "eastgate", "hillcrest", "lakeshore",
    "westport", "midtown", "southfield", "northside", "brookside", "parkrow",
};
const std::vector<std::string> kTopics = {
    "chess", "sailing", "pottery", "jazz", "hiking", "baking", "painting",
    "cycling", "gardening", "photography", "fishing", "astronomy", "knitting",
    "archery", "calligraphy", "birdwatching",
};
const std::vector<std::string> kAdjectives = {
    "quiet", "famous", "tiny", "busy", "cozy", "ancient", "modern", "crowded",
    "peaceful", "lively", "hidden", "popular",
};
const std::vector<std::string> kNouns = {
    "bakery", "museum", "workshop", "library", "cafe", "theater", "market",
    "garden", "gallery", "studio",
};
const std::vector<std::string> kTimes = {
    "morning", "noon", "afternoon", "evening", "night", "weekend", "spring", "summer",
};
const std::vector<std::string> kGenericResponses = {
    "i do not know .",
    "yes .",
    "no .",
    "that is good .",
    "i see .",
    "maybe .",
    "i am not sure .",
    "sounds great .",
};

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& pool) {
    return pool[static_cast<size_t>(rng.next_below(pool.size()))];
}

std::string pick_entity(Rng& rng) {
    return pick(rng, kEntityPrefix) + pick(rng, kEntitySuffix);
}

// Half the query families are "chit-chat": the bulk of their responses are
// drawn from the small generic pool, so they pair many queries with one
// response, but a contentful answer also exists for each. The other half are
// always answered contentfully, either by echoing the query's content words
// or with entity-bearing descriptions.
std::pair<std::string, std::string> make_pair(Rng& rng, double p_generic) {
    bool generic = rng.next_real() < p_generic;
    switch (rng.next_below(8)) {
        case 0: {
            std::string time = pick(rng, kTimes);
            std::string q = "any plans for the " + time + " ?";
            if (generic) return {q, pick(rng, kGenericResponses)};
            return {q, "i will visit " + pick_entity(rng) + " in the " + time + " ."};
        }
        case 1: {
            std::string topic = pick(rng, kTopics);
            std::string q = "what do you think about " + topic + " ?";
            if (generic) return {q, pick(rng, kGenericResponses)};
            return {q, "i think " + topic + " is really " + pick(rng, kAdjectives) + " ."};
        }
        case 2: {
            std::string entity = pick_entity(rng);
            std::string q = "did you visit " + entity + " ?";
            if (generic) return {q, pick(rng, kGenericResponses)};
            return {q, "yes , " + entity + " is a " + pick(rng, kAdjectives) + " " +
                           pick(rng, kNouns) + " ."};
        }
        case 3: {
            std::string noun = pick(rng, kNouns);
            std::string time = pick(rng, kTimes);
            std::string q = "how was the " + noun + " in the " + time + " ?";
            if (generic) return {q, pick(rng, kGenericResponses)};
            return {q, "the " + noun + " was " + pick(rng, kAdjectives) + " in the " + time + " ."};
        }
        case 4: {
            std::string entity = pick_entity(rng);
            return {"tell me about " + entity + " .",
                    entity + " is a " + pick(rng, kAdjectives) + " " + pick(rng, kNouns) +
                        " near " + pick(rng, kPlaces) + " ."};
        }
        case 5: {
            std::string entity = pick_entity(rng);
            return {"where is " + entity + " ?",
                    entity + " stands near the " + pick(rng, kPlaces) + " corner ."};
        }
        case 6: {
            std::string topic = pick(rng, kTopics);
            std::string time = pick(rng, kTimes);
            return {"do you like " + topic + " in the " + time + " ?",
                    "i really like " + topic + " in the " + time + " ."};
        }
        default: {
            std::string noun = pick(rng, kNouns);
            std::string time = pick(rng, kTimes);
            return {"is the " + noun + " open in the " + time + " ?",
                    "the " + noun + " is open in the " + time + " ."};
        }
    }
}

void write_split(const std::string& path, int64_t n, Rng& rng, const SyntheticSpec& spec) {
    double total = spec.generic_weight + spec.specific_weight + spec.echo_weight;
    require(total > 0, "synthetic corpus: mixture weights must be positive");
    // Generic responses occur only in the four chit-chat families, so the
    // per-family rate is doubled to hit the corpus-level target.
    double p_generic = std::min(1.0, 2.0 * spec.generic_weight / total);

    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    require(out.good(), "cannot write synthetic corpus: " + path);
    for (int64_t i = 0; i < n; ++i) {
        auto pair = make_pair(rng, p_generic);
        out << pair.first << '\t' << pair.second << '\n';
    }
}

}  // namespace

void write_synthetic_corpus(const std::string& dir, const SyntheticSpec& spec) {
    require(spec.train_pairs > 0 && spec.valid_pairs > 0 && spec.test_pairs > 0,
            "synthetic corpus: all splits must be non-empty");
    std::filesystem::create_directories(dir);
    Rng train_rng(splitmix64(spec.seed ^ fnv1a64("synth.train")));
    Rng valid_rng(splitmix64(spec.seed ^ fnv1a64("synth.valid")));
    Rng test_rng(splitmix64(spec.seed ^ fnv1a64("synth.test")));
    write_split(dir + "/train.tsv", spec.train_pairs, train_rng, spec);
    write_split(dir + "/valid.tsv", spec.valid_pairs, valid_rng, spec);
    write_split(dir + "/test.tsv", spec.test_pairs, test_rng, spec);
}

}  // namespace mae
