// Length-normalized beam-search generation plus the inference-time
// inspection hooks: adapter masking and fusion-weight dumps.
#pragma once

#include <string>
#include <vector>

#include "mae/model.hpp"

namespace mae::infer {

struct GenConfig {
    int64_t beam_size = 5;
    int64_t max_len = 32;  // generated tokens, excluding BOS/EOS

    void validate() const;
};

// Decodes from BOS until EOS or max_len; hypotheses are ranked by mean
// token log-probability, ties broken by token id then hypothesis index.
// Returns the generated ids without BOS/EOS; PAD is never produced.
std::vector<int> beam_search(const model::ModelView& view, const std::vector<int>& query_ids,
                             const GenConfig& cfg);

struct Generation {
    std::string query;      // raw query text
    std::string response;   // detokenized generated response
    std::vector<int> ids;
};

std::vector<Generation> generate_set(const model::ModelView& view, const Corpus& test,
                                     const Vocab& vocab, const GenConfig& cfg);

void write_generations(const std::string& path, const std::vector<Generation>& generations);
// Reads a "query<TAB>response" TSV (blank responses allowed).
std::vector<std::pair<std::string, std::string>> read_generations(const std::string& path);

// Selector grammar: clauses separated by ';', each clause a comma list of
// constraints ("block=2", "type=self_attn|cross_attn|ffn", "stack=enc|dec"),
// or the single word "all". Blocks are 1-based. A position matching every
// constraint of any clause is masked.
std::vector<bool> parse_mask_selector(const std::string& selector, const model::ModelConfig& cfg);

// Returns a copy of the view with the selected positions passed through
// unchanged; the original view is untouched.
model::ModelView mask_adapters(const model::ModelView& view, const std::string& selector);

// TSV: stack, block, position type, adapter view, mean lambda, mean distance,
// averaged over the given samples.
void dump_fusion_heatmap(const model::ModelView& view,
                         const std::vector<const DialoguePair*>& samples, const Vocab& vocab,
                         const std::string& out_path);

}  // namespace mae::infer
