// Transformer encoder-decoder base model, bottleneck adapter layers, and the
// distance-weighted adaptive fusion of multiple adapters.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mae/autodiff.hpp"
#include "mae/corpus.hpp"

namespace mae::model {

struct ModelConfig {
    int64_t vocab_size = 0;
    int64_t d_model = 64;
    int64_t n_enc_layers = 2;
    int64_t n_dec_layers = 2;
    int64_t n_heads = 2;
    int64_t d_ff = 256;
    int64_t adapter_down = 16;
    double label_smoothing = 0.1;
    double dropout = 0.1;
    int64_t max_len = 32;
    bool tie_output = true;

    void validate() const;
};

// Named parameters in a fixed order; the order defines the checkpoint layout
// and the optimizer's update sequence.
struct ParamSet {
    std::vector<std::pair<std::string, ad::Tensor>> items;

    ad::Tensor& get(const std::string& name);
    const ad::Tensor& get(const std::string& name) const;
    void add(const std::string& name, ad::Tensor t);
    void set_trainable(bool trainable);
    void zero_grads();
};

// FNV over the float32 serialization of all parameter values, in item order.
uint64_t params_checksum(const ParamSet& params);

struct BaseParams {
    ModelConfig cfg;
    ParamSet params;
};

BaseParams init_base(const ModelConfig& cfg, uint64_t seed);
int64_t base_param_count(const ModelConfig& cfg);

enum class PosType { SelfAttn, CrossAttn, Ffn };
std::string pos_type_name(PosType t);

struct AdapterPosition {
    bool decoder = false;
    int block = 0;  // 0-based within its stack
    PosType type = PosType::SelfAttn;
};

// Two positions per encoder block (after self-attention, after FFN), three
// per decoder block (self-attention, encoder-decoder attention, FFN).
std::vector<AdapterPosition> adapter_positions(const ModelConfig& cfg);
std::string position_name(const AdapterPosition& pos);

struct AdapterParams {
    std::string view;
    ParamSet params;  // "<position>.down" [d, down], "<position>.up" [down, d]
};

// Down-projections get a small scaled-uniform init; up-projections start at
// exactly zero, so a fresh adapter is the identity map.
AdapterParams init_adapter(const ModelConfig& cfg, const std::string& view, uint64_t seed);

enum class Fusion { None, Single, AF, Stack };
enum class Distance { L1, L2 };

std::string fusion_name(Fusion f);
Fusion fusion_from_name(const std::string& name);
Distance distance_from_name(const std::string& name);

// Mean per-adapter fusion weights and raw distances accumulated during
// forward passes, one slot per adapter position.
struct FusionTrace {
    std::vector<std::vector<double>> lambda_sum;
    std::vector<std::vector<double>> dist_sum;
    std::vector<int64_t> rows;

    void init(size_t n_positions, size_t n_adapters);
};

struct ModelView {
    const BaseParams* base = nullptr;
    std::vector<const AdapterParams*> adapters;
    Fusion fusion = Fusion::None;
    Distance distance = Distance::L1;
    std::vector<bool> mask;  // per adapter position; empty = nothing masked

    bool masked(size_t position) const {
        return !mask.empty() && mask[position];
    }
    void validate() const;
};

// z' = gelu(z . w_down) . w_up + z
ad::Tensor adapter_forward(const ad::Tensor& z, const ad::Tensor& w_down, const ad::Tensor& w_up);

// lambda_m = ||z_m - z|| / sum_k ||z_k - z|| over all tensor elements;
// uniform when every distance is zero.
std::vector<double> compute_af_weights(const ad::Tensor& z,
                                       const std::vector<ad::Tensor>& z_list, Distance distance);

// A padded training/evaluation batch in encoded token ids.
struct Batch {
    std::vector<int> src;          // [batch * src_len]
    std::vector<int> tgt_in;       // [batch * tgt_len], starts with BOS
    std::vector<int> tgt_out;      // [batch * tgt_len], ends with EOS
    std::vector<ad::Real> tgt_weight;  // 1 for real targets, 0 for padding
    int64_t batch = 0;
    int64_t src_len = 0;
    int64_t tgt_len = 0;
};

Batch make_batch(const std::vector<const DialoguePair*>& pairs, const Vocab& vocab,
                 int64_t max_len);

struct ForwardOpts {
    bool train = false;
    uint64_t seed = 0;
    uint64_t step = 0;
    FusionTrace* trace = nullptr;
};

// Teacher-forced forward; returns logits [batch, tgt_len, vocab].
ad::Tensor forward_batch(const ModelView& view, const Batch& batch, const ForwardOpts& opts);

// Single-sample forward over a response prefix (must start with BOS);
// returns logits [prefix_len, vocab].
ad::Tensor forward_with_adapters(const ModelView& view, const std::vector<int>& query_ids,
                                 const std::vector<int>& response_prefix, bool train);

// Encoder output cached for incremental decoding.
struct EncodedQuery {
    ad::Tensor memory;  // [1, src_len, d_model]
    std::vector<int> src_ids;
};

EncodedQuery encode_query(const ModelView& view, const std::vector<int>& query_ids);

// Next-token logits given BOS-prefixed decoder input; pure value computation.
std::vector<ad::Real> decode_next_logits(const ModelView& view, const EncodedQuery& enc,
                                         const std::vector<int>& prefix_with_bos);

// Per-(position, adapter) mean fusion weight and mean distance over one
// teacher-forced pass of the sample.
struct FusionReport {
    std::vector<AdapterPosition> positions;
    std::vector<std::vector<double>> lambda;    // [position][adapter]
    std::vector<std::vector<double>> distance;  // [position][adapter]
};

FusionReport collect_fusion_weights(const ModelView& view, const std::vector<int>& query_ids,
                                    const std::vector<int>& response_ids);

}  // namespace mae::model
