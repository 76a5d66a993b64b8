#include "mae/model.hpp"

#include <algorithm>
#include <cmath>

namespace mae::model {

using ad::Tensor;

void ModelConfig::validate() const {
    require(vocab_size >= Vocab::kNumReserved, "model config: vocab_size not set");
    require(d_model > 0 && n_heads > 0 && d_model % n_heads == 0,
            "model config: d_model must be divisible by n_heads");
    require(n_enc_layers >= 1 && n_dec_layers >= 1, "model config: need at least one layer");
    require(d_ff > 0, "model config: d_ff must be positive");
    require(adapter_down > 0 && adapter_down < d_model,
            "model config: adapter_down must be in (0, d_model)");
    require(label_smoothing >= 0.0 && label_smoothing < 1.0,
            "model config: label_smoothing must be in [0, 1)");
    require(dropout >= 0.0 && dropout < 1.0, "model config: dropout must be in [0, 1)");
    require(max_len >= 2, "model config: max_len must be at least 2");
}

Tensor& ParamSet::get(const std::string& name) {
    for (auto& [n, t] : items)
        if (n == name) return t;
    fail("unknown parameter: " + name);
}

const Tensor& ParamSet::get(const std::string& name) const {
    for (const auto& [n, t] : items)
        if (n == name) return t;
    fail("unknown parameter: " + name);
}

void ParamSet::add(const std::string& name, Tensor t) {
    items.emplace_back(name, std::move(t));
}

void ParamSet::set_trainable(bool trainable) {
    for (auto& [n, t] : items) {
        (void)n;
        t.set_requires_grad(trainable);
    }
}

void ParamSet::zero_grads() {
    for (auto& [n, t] : items) {
        (void)n;
        t.zero_grad();
    }
}

uint64_t params_checksum(const ParamSet& params) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : params.items) {
        h = fnv1a64(name, h);
        for (ad::Real v : t.values()) {
            float f = static_cast<float>(v);
            h = fnv1a64_bytes(&f, sizeof(f), h);
        }
    }
    return h;
}

namespace {

Tensor init_matrix(const std::string& name, int64_t rows, int64_t cols, uint64_t seed) {
    double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Rng rng = named_rng(seed, name);
    std::vector<ad::Real> values(static_cast<size_t>(rows * cols));
    for (auto& v : values) v = static_cast<ad::Real>(rng.next_uniform(-limit, limit));
    return Tensor::param({rows, cols}, std::move(values));
}

Tensor init_vector(int64_t n, ad::Real fill) {
    return Tensor::param({n}, std::vector<ad::Real>(static_cast<size_t>(n), fill));
}

void add_attention_params(ParamSet& p, const std::string& prefix, int64_t d, uint64_t seed) {
    for (const char* w : {"wq", "wk", "wv", "wo"})
        p.add(prefix + "." + w, init_matrix(prefix + "." + w, d, d, seed));
    for (const char* b : {"bq", "bk", "bv", "bo"})
        p.add(prefix + "." + b, init_vector(d, 0));
}

void add_ln_params(ParamSet& p, const std::string& prefix, int64_t d) {
    p.add(prefix + ".g", init_vector(d, 1));
    p.add(prefix + ".b", init_vector(d, 0));
}

void add_ffn_params(ParamSet& p, const std::string& prefix, int64_t d, int64_t ff, uint64_t seed) {
    p.add(prefix + ".w1", init_matrix(prefix + ".w1", d, ff, seed));
    p.add(prefix + ".b1", init_vector(ff, 0));
    p.add(prefix + ".w2", init_matrix(prefix + ".w2", ff, d, seed));
    p.add(prefix + ".b2", init_vector(d, 0));
}

}  // namespace

BaseParams init_base(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    BaseParams base;
    base.cfg = cfg;
    ParamSet& p = base.params;

    p.add("embed.tok", init_matrix("embed.tok", cfg.vocab_size, cfg.d_model, seed));
    for (int64_t i = 0; i < cfg.n_enc_layers; ++i) {
        std::string pre = "enc." + std::to_string(i);
        add_attention_params(p, pre + ".attn", cfg.d_model, seed);
        add_ln_params(p, pre + ".ln1", cfg.d_model);
        add_ffn_params(p, pre + ".ffn", cfg.d_model, cfg.d_ff, seed);
        add_ln_params(p, pre + ".ln2", cfg.d_model);
    }
    for (int64_t i = 0; i < cfg.n_dec_layers; ++i) {
        std::string pre = "dec." + std::to_string(i);
        add_attention_params(p, pre + ".self", cfg.d_model, seed);
        add_ln_params(p, pre + ".ln1", cfg.d_model);
        add_attention_params(p, pre + ".cross", cfg.d_model, seed);
        add_ln_params(p, pre + ".ln2", cfg.d_model);
        add_ffn_params(p, pre + ".ffn", cfg.d_model, cfg.d_ff, seed);
        add_ln_params(p, pre + ".ln3", cfg.d_model);
    }
    if (!cfg.tie_output)
        p.add("out.proj", init_matrix("out.proj", cfg.d_model, cfg.vocab_size, seed));
    return base;
}

int64_t base_param_count(const ModelConfig& cfg) {
    int64_t d = cfg.d_model, ff = cfg.d_ff;
    int64_t attn = 4 * d * d + 4 * d;
    int64_t ln = 2 * d;
    int64_t ffn = d * ff + ff + ff * d + d;
    int64_t enc = cfg.n_enc_layers * (attn + ffn + 2 * ln);
    int64_t dec = cfg.n_dec_layers * (2 * attn + ffn + 3 * ln);
    int64_t emb = cfg.vocab_size * d;
    int64_t out = cfg.tie_output ? 0 : d * cfg.vocab_size;
    return emb + enc + dec + out;
}

std::string pos_type_name(PosType t) {
    switch (t) {
        case PosType::SelfAttn: return "self_attn";
        case PosType::CrossAttn: return "cross_attn";
        case PosType::Ffn: return "ffn";
    }
    return "?";
}

std::vector<AdapterPosition> adapter_positions(const ModelConfig& cfg) {
    std::vector<AdapterPosition> out;
    for (int64_t i = 0; i < cfg.n_enc_layers; ++i) {
        out.push_back({false, static_cast<int>(i), PosType::SelfAttn});
        out.push_back({false, static_cast<int>(i), PosType::Ffn});
    }
    for (int64_t i = 0; i < cfg.n_dec_layers; ++i) {
        out.push_back({true, static_cast<int>(i), PosType::SelfAttn});
        out.push_back({true, static_cast<int>(i), PosType::CrossAttn});
        out.push_back({true, static_cast<int>(i), PosType::Ffn});
    }
    return out;
}

std::string position_name(const AdapterPosition& pos) {
    return std::string(pos.decoder ? "dec." : "enc.") + std::to_string(pos.block) + "." +
           pos_type_name(pos.type);
}

AdapterParams init_adapter(const ModelConfig& cfg, const std::string& view, uint64_t seed) {
    cfg.validate();
    AdapterParams adapter;
    adapter.view = view;
    for (const auto& pos : adapter_positions(cfg)) {
        std::string pre = position_name(pos);
        adapter.params.add(pre + ".down", init_matrix("adapter." + view + "." + pre + ".down",
                                                      cfg.d_model, cfg.adapter_down, seed));
        adapter.params.add(pre + ".up",
                           Tensor::param({cfg.adapter_down, cfg.d_model},
                                         std::vector<ad::Real>(static_cast<size_t>(
                                             cfg.adapter_down * cfg.d_model), 0)));
    }
    return adapter;
}

std::string fusion_name(Fusion f) {
    switch (f) {
        case Fusion::None: return "none";
        case Fusion::Single: return "single";
        case Fusion::AF: return "af";
        case Fusion::Stack: return "stack";
    }
    return "?";
}

Fusion fusion_from_name(const std::string& name) {
    if (name == "none") return Fusion::None;
    if (name == "single") return Fusion::Single;
    if (name == "af") return Fusion::AF;
    if (name == "stack") return Fusion::Stack;
    fail("unknown fusion mode: " + name);
}

Distance distance_from_name(const std::string& name) {
    if (name == "l1") return Distance::L1;
    if (name == "l2") return Distance::L2;
    fail("unknown distance: " + name + " (expected l1|l2)");
}

void FusionTrace::init(size_t n_positions, size_t n_adapters) {
    lambda_sum.assign(n_positions, std::vector<double>(n_adapters, 0.0));
    dist_sum.assign(n_positions, std::vector<double>(n_adapters, 0.0));
    rows.assign(n_positions, 0);
}

void ModelView::validate() const {
    require(base != nullptr, "model view has no base parameters");
    switch (fusion) {
        case Fusion::None:
            require(adapters.empty(), "fusion=none with adapters present");
            break;
        case Fusion::Single:
            require(adapters.size() == 1, "fusion=single requires exactly one adapter");
            break;
        case Fusion::AF:
        case Fusion::Stack:
            require(!adapters.empty(), fusion_name(fusion) + " fusion requires adapters");
            break;
    }
    if (!mask.empty())
        require(mask.size() == adapter_positions(base->cfg).size(),
                "adapter mask length does not match position count");
}

Tensor adapter_forward(const Tensor& z, const Tensor& w_down, const Tensor& w_up) {
    return ad::add(ad::matmul(ad::gelu(ad::matmul(z, w_down)), w_up), z);
}

namespace {

double row_distance(const ad::Real* a, const ad::Real* b, int64_t n, Distance d) {
    double acc = 0.0;
    if (d == Distance::L1) {
        for (int64_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(a[i] - b[i]));
    } else {
        for (int64_t i = 0; i < n; ++i) {
            double diff = static_cast<double>(a[i] - b[i]);
            acc += diff * diff;
        }
        acc = std::sqrt(acc);
    }
    return acc;
}

std::vector<double> normalize_distances(std::vector<double> dist) {
    double total = 0.0;
    for (double v : dist) total += v;
    if (total <= 0.0) {
        // Every adapter matched its input exactly; fall back to uniform.
        std::fill(dist.begin(), dist.end(), 1.0 / static_cast<double>(dist.size()));
        return dist;
    }
    for (double& v : dist) v /= total;
    return dist;
}

}  // namespace

std::vector<double> compute_af_weights(const Tensor& z, const std::vector<Tensor>& z_list,
                                       Distance distance) {
    require(!z_list.empty(), "adaptive fusion needs at least one adapter output");
    std::vector<double> dist;
    dist.reserve(z_list.size());
    for (const auto& zm : z_list) {
        require(zm.shape() == z.shape(), "adaptive fusion: shape mismatch");
        dist.push_back(row_distance(zm.values().data(), z.values().data(), z.numel(), distance));
    }
    return normalize_distances(std::move(dist));
}

Batch make_batch(const std::vector<const DialoguePair*>& pairs, const Vocab& vocab,
                 int64_t max_len) {
    require(!pairs.empty(), "cannot build an empty batch");
    Batch b;
    b.batch = static_cast<int64_t>(pairs.size());
    for (const auto* p : pairs) {
        b.src_len = std::max(b.src_len, std::min<int64_t>(static_cast<int64_t>(p->query.size()), max_len));
        b.tgt_len = std::max(b.tgt_len,
                             std::min<int64_t>(static_cast<int64_t>(p->response.size()), max_len - 1) + 1);
    }
    b.src.assign(static_cast<size_t>(b.batch * b.src_len), Vocab::kPad);
    b.tgt_in.assign(static_cast<size_t>(b.batch * b.tgt_len), Vocab::kPad);
    b.tgt_out.assign(static_cast<size_t>(b.batch * b.tgt_len), Vocab::kPad);
    b.tgt_weight.assign(static_cast<size_t>(b.batch * b.tgt_len), 0);

    for (int64_t i = 0; i < b.batch; ++i) {
        const auto* p = pairs[static_cast<size_t>(i)];
        auto q = vocab.encode(p->query);
        auto r = vocab.encode(p->response);
        if (static_cast<int64_t>(q.size()) > b.src_len) q.resize(static_cast<size_t>(b.src_len));
        if (static_cast<int64_t>(r.size()) > b.tgt_len - 1) r.resize(static_cast<size_t>(b.tgt_len - 1));

        for (size_t j = 0; j < q.size(); ++j) b.src[static_cast<size_t>(i * b.src_len) + j] = q[j];

        b.tgt_in[static_cast<size_t>(i * b.tgt_len)] = Vocab::kBos;
        for (size_t j = 0; j < r.size(); ++j) {
            b.tgt_in[static_cast<size_t>(i * b.tgt_len) + j + 1] = r[j];
            b.tgt_out[static_cast<size_t>(i * b.tgt_len) + j] = r[j];
            b.tgt_weight[static_cast<size_t>(i * b.tgt_len) + j] = 1;
        }
        b.tgt_out[static_cast<size_t>(i * b.tgt_len) + r.size()] = Vocab::kEos;
        b.tgt_weight[static_cast<size_t>(i * b.tgt_len) + r.size()] = 1;
    }
    return b;
}

namespace {

constexpr ad::Real kMaskValue = ad::Real(-1e30);

// Sinusoidal positions tiled over the batch.
Tensor positional_encoding(int64_t batch, int64_t len, int64_t d) {
    std::vector<ad::Real> row(static_cast<size_t>(len * d));
    for (int64_t pos = 0; pos < len; ++pos) {
        for (int64_t i = 0; i < d; i += 2) {
            double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
            row[static_cast<size_t>(pos * d + i)] = static_cast<ad::Real>(std::sin(angle));
            if (i + 1 < d)
                row[static_cast<size_t>(pos * d + i + 1)] = static_cast<ad::Real>(std::cos(angle));
        }
    }
    std::vector<ad::Real> tiled(static_cast<size_t>(batch * len * d));
    for (int64_t b = 0; b < batch; ++b)
        std::copy(row.begin(), row.end(), tiled.begin() + b * len * d);
    return Tensor::from({batch, len, d}, std::move(tiled));
}

// Additive attention mask [batch*heads, q_len, k_len]. Masks padded key
// columns; optionally causal.
Tensor attention_mask(const std::vector<int>& key_ids, int64_t batch, int64_t k_len,
                      int64_t q_len, int64_t heads, bool causal) {
    std::vector<ad::Real> m(static_cast<size_t>(batch * heads * q_len * k_len), 0);
    for (int64_t b = 0; b < batch; ++b) {
        for (int64_t q = 0; q < q_len; ++q) {
            for (int64_t k = 0; k < k_len; ++k) {
                bool blocked = key_ids[static_cast<size_t>(b * k_len + k)] == Vocab::kPad;
                if (causal && k > q) blocked = true;
                if (!blocked) continue;
                for (int64_t h = 0; h < heads; ++h)
                    m[static_cast<size_t>((((b * heads + h) * q_len) + q) * k_len + k)] = kMaskValue;
            }
        }
    }
    return Tensor::from({batch * heads, q_len, k_len}, std::move(m));
}

struct DropoutStream {
    uint64_t base_key = 0;
    uint64_t counter = 0;
    bool train = false;
    double p = 0.0;

    Tensor apply(const Tensor& x) {
        ++counter;
        if (!train || p == 0.0) return x;
        uint64_t key = splitmix64(base_key + counter * 0x9e3779b97f4a7c15ULL);
        return ad::dropout(x, static_cast<ad::Real>(p), true, key);
    }
};

struct ForwardCtx {
    const ModelView* view = nullptr;
    const ModelConfig* cfg = nullptr;
    DropoutStream drop;
    FusionTrace* trace = nullptr;
};

Tensor apply_adapters(ForwardCtx& ctx, const Tensor& z, size_t position) {
    const ModelView& view = *ctx.view;
    if (view.fusion == Fusion::None || view.masked(position)) return z;

    std::string pos = position_name(adapter_positions(*ctx.cfg)[position]);
    if (view.fusion == Fusion::Single) {
        const ParamSet& p = view.adapters[0]->params;
        return adapter_forward(z, p.get(pos + ".down"), p.get(pos + ".up"));
    }
    if (view.fusion == Fusion::Stack) {
        Tensor out = z;
        for (const auto* adapter : view.adapters) {
            const ParamSet& p = adapter->params;
            out = adapter_forward(out, p.get(pos + ".down"), p.get(pos + ".up"));
        }
        return out;
    }

    // Adaptive fusion: weights computed per row (sequence position) from the
    // distance between each adapter's output and its input, treated as
    // constants, so edits to later sequence positions cannot leak backwards.
    const size_t n_adapters = view.adapters.size();
    std::vector<Tensor> outs;
    outs.reserve(n_adapters);
    for (const auto* adapter : view.adapters) {
        const ParamSet& p = adapter->params;
        outs.push_back(adapter_forward(z, p.get(pos + ".down"), p.get(pos + ".up")));
    }

    int64_t cols = z.shape().back();
    int64_t rows = z.numel() / cols;
    std::vector<std::vector<ad::Real>> lambdas(n_adapters,
                                               std::vector<ad::Real>(static_cast<size_t>(rows)));
    for (int64_t r = 0; r < rows; ++r) {
        std::vector<double> dist(n_adapters);
        for (size_t m = 0; m < n_adapters; ++m)
            dist[m] = row_distance(outs[m].values().data() + r * cols,
                                   z.values().data() + r * cols, cols, view.distance);
        std::vector<double> raw = dist;
        std::vector<double> lam = normalize_distances(std::move(dist));
        for (size_t m = 0; m < n_adapters; ++m) {
            lambdas[m][static_cast<size_t>(r)] = static_cast<ad::Real>(lam[m]);
            if (ctx.trace) {
                ctx.trace->lambda_sum[position][m] += lam[m];
                ctx.trace->dist_sum[position][m] += raw[m];
            }
        }
        if (ctx.trace) ++ctx.trace->rows[position];
    }

    Tensor fused = ad::scale_rows(outs[0], lambdas[0]);
    for (size_t m = 1; m < n_adapters; ++m)
        fused = ad::add(fused, ad::scale_rows(outs[m], lambdas[m]));
    return fused;
}

Tensor attention_block(ForwardCtx& ctx, const Tensor& queries, const Tensor& keys_values,
                       const ParamSet& p, const std::string& prefix, const Tensor& mask) {
    const ModelConfig& cfg = *ctx.cfg;
    Tensor q = ad::add_bias(ad::matmul(queries, p.get(prefix + ".wq")), p.get(prefix + ".bq"));
    Tensor k = ad::add_bias(ad::matmul(keys_values, p.get(prefix + ".wk")), p.get(prefix + ".bk"));
    Tensor v = ad::add_bias(ad::matmul(keys_values, p.get(prefix + ".wv")), p.get(prefix + ".bv"));

    Tensor qh = ad::split_heads(q, cfg.n_heads);
    Tensor kh = ad::split_heads(k, cfg.n_heads);
    Tensor vh = ad::split_heads(v, cfg.n_heads);

    ad::Real scaling = static_cast<ad::Real>(
        1.0 / std::sqrt(static_cast<double>(cfg.d_model / cfg.n_heads)));
    Tensor scores = ad::scale(ad::matmul(qh, ad::transpose_last2(kh)), scaling);
    scores = ad::add(scores, mask);
    Tensor probs = ctx.drop.apply(ad::softmax(scores));
    Tensor context = ad::merge_heads(ad::matmul(probs, vh), cfg.n_heads);
    Tensor out = ad::add_bias(ad::matmul(context, p.get(prefix + ".wo")), p.get(prefix + ".bo"));
    return ctx.drop.apply(out);
}

Tensor ffn_block(ForwardCtx& ctx, const Tensor& x, const ParamSet& p, const std::string& prefix) {
    Tensor h = ad::relu(ad::add_bias(ad::matmul(x, p.get(prefix + ".w1")), p.get(prefix + ".b1")));
    h = ctx.drop.apply(h);
    Tensor out = ad::add_bias(ad::matmul(h, p.get(prefix + ".w2")), p.get(prefix + ".b2"));
    return ctx.drop.apply(out);
}

Tensor sublayer_norm(const ParamSet& p, const std::string& ln, const Tensor& x,
                     const Tensor& delta) {
    return ad::layer_norm(ad::add(x, delta), p.get(ln + ".g"), p.get(ln + ".b"));
}

Tensor embed_tokens(ForwardCtx& ctx, const std::vector<int>& ids, int64_t batch, int64_t len) {
    const ParamSet& p = ctx.view->base->params;
    const ModelConfig& cfg = *ctx.cfg;
    Tensor x = ad::embedding_lookup(p.get("embed.tok"), ids, {batch, len});
    x = ad::scale(x, static_cast<ad::Real>(std::sqrt(static_cast<double>(cfg.d_model))));
    x = ad::add(x, positional_encoding(batch, len, cfg.d_model));
    return ctx.drop.apply(x);
}

Tensor run_encoder(ForwardCtx& ctx, const std::vector<int>& src, int64_t batch, int64_t src_len) {
    const ModelConfig& cfg = *ctx.cfg;
    const ParamSet& p = ctx.view->base->params;
    Tensor mask = attention_mask(src, batch, src_len, src_len, cfg.n_heads, false);
    Tensor x = embed_tokens(ctx, src, batch, src_len);
    for (int64_t i = 0; i < cfg.n_enc_layers; ++i) {
        std::string pre = "enc." + std::to_string(i);
        size_t pos_base = static_cast<size_t>(i) * 2;
        Tensor attn = attention_block(ctx, x, x, p, pre + ".attn", mask);
        x = sublayer_norm(p, pre + ".ln1", x, attn);
        x = apply_adapters(ctx, x, pos_base);
        Tensor ff = ffn_block(ctx, x, p, pre + ".ffn");
        x = sublayer_norm(p, pre + ".ln2", x, ff);
        x = apply_adapters(ctx, x, pos_base + 1);
    }
    return x;
}

Tensor run_decoder(ForwardCtx& ctx, const Tensor& memory, const std::vector<int>& src,
                   const std::vector<int>& tgt_in, int64_t batch, int64_t src_len,
                   int64_t tgt_len) {
    const ModelConfig& cfg = *ctx.cfg;
    const ParamSet& p = ctx.view->base->params;
    size_t enc_positions = static_cast<size_t>(cfg.n_enc_layers) * 2;

    Tensor self_mask = attention_mask(tgt_in, batch, tgt_len, tgt_len, cfg.n_heads, true);
    Tensor cross_mask = attention_mask(src, batch, src_len, tgt_len, cfg.n_heads, false);

    Tensor y = embed_tokens(ctx, tgt_in, batch, tgt_len);
    for (int64_t i = 0; i < cfg.n_dec_layers; ++i) {
        std::string pre = "dec." + std::to_string(i);
        size_t pos_base = enc_positions + static_cast<size_t>(i) * 3;
        Tensor self_attn = attention_block(ctx, y, y, p, pre + ".self", self_mask);
        y = sublayer_norm(p, pre + ".ln1", y, self_attn);
        y = apply_adapters(ctx, y, pos_base);
        Tensor cross = attention_block(ctx, y, memory, p, pre + ".cross", cross_mask);
        y = sublayer_norm(p, pre + ".ln2", y, cross);
        y = apply_adapters(ctx, y, pos_base + 1);
        Tensor ff = ffn_block(ctx, y, p, pre + ".ffn");
        y = sublayer_norm(p, pre + ".ln3", y, ff);
        y = apply_adapters(ctx, y, pos_base + 2);
    }
    return y;
}

Tensor output_logits(const ModelView& view, const Tensor& decoded) {
    const ParamSet& p = view.base->params;
    if (view.base->cfg.tie_output)
        return ad::matmul(decoded, ad::transpose_last2(p.get("embed.tok")));
    return ad::matmul(decoded, p.get("out.proj"));
}

ForwardCtx make_ctx(const ModelView& view, const ForwardOpts& opts) {
    view.validate();
    ForwardCtx ctx;
    ctx.view = &view;
    ctx.cfg = &view.base->cfg;
    ctx.drop.train = opts.train;
    ctx.drop.p = view.base->cfg.dropout;
    ctx.drop.base_key = splitmix64(opts.seed ^ 0x6d61652d64726f70ULL) + opts.step;
    ctx.trace = opts.trace;
    if (ctx.trace)
        ctx.trace->init(adapter_positions(view.base->cfg).size(), view.adapters.size());
    return ctx;
}

}  // namespace

Tensor forward_batch(const ModelView& view, const Batch& batch, const ForwardOpts& opts) {
    ForwardCtx ctx = make_ctx(view, opts);
    Tensor memory = run_encoder(ctx, batch.src, batch.batch, batch.src_len);
    Tensor decoded = run_decoder(ctx, memory, batch.src, batch.tgt_in, batch.batch,
                                 batch.src_len, batch.tgt_len);
    return output_logits(view, decoded);
}

Tensor forward_with_adapters(const ModelView& view, const std::vector<int>& query_ids,
                             const std::vector<int>& response_prefix, bool train) {
    require(!query_ids.empty(), "query must be non-empty");
    require(!response_prefix.empty() && response_prefix.front() == Vocab::kBos,
            "response prefix must start with BOS");
    ForwardOpts opts;
    opts.train = train;
    ForwardCtx ctx = make_ctx(view, opts);
    int64_t src_len = static_cast<int64_t>(query_ids.size());
    int64_t tgt_len = static_cast<int64_t>(response_prefix.size());
    Tensor memory = run_encoder(ctx, query_ids, 1, src_len);
    Tensor decoded = run_decoder(ctx, memory, query_ids, response_prefix, 1, src_len, tgt_len);
    Tensor logits = output_logits(view, decoded);
    return ad::reshape(logits, {tgt_len, view.base->cfg.vocab_size});
}

EncodedQuery encode_query(const ModelView& view, const std::vector<int>& query_ids) {
    require(!query_ids.empty(), "query must be non-empty");
    ad::NoGradGuard no_grad;
    ForwardOpts opts;
    ForwardCtx ctx = make_ctx(view, opts);
    EncodedQuery enc;
    enc.src_ids = query_ids;
    enc.memory = run_encoder(ctx, query_ids, 1, static_cast<int64_t>(query_ids.size()));
    return enc;
}

std::vector<ad::Real> decode_next_logits(const ModelView& view, const EncodedQuery& enc,
                                         const std::vector<int>& prefix_with_bos) {
    require(!prefix_with_bos.empty() && prefix_with_bos.front() == Vocab::kBos,
            "decoder prefix must start with BOS");
    ad::NoGradGuard no_grad;
    ForwardOpts opts;
    ForwardCtx ctx = make_ctx(view, opts);
    int64_t tgt_len = static_cast<int64_t>(prefix_with_bos.size());
    Tensor decoded = run_decoder(ctx, enc.memory, enc.src_ids, prefix_with_bos, 1,
                                 static_cast<int64_t>(enc.src_ids.size()), tgt_len);
    Tensor last = ad::slice(decoded, 1, tgt_len - 1, 1);
    Tensor logits = output_logits(view, last);
    return logits.values();
}

FusionReport collect_fusion_weights(const ModelView& view, const std::vector<int>& query_ids,
                                    const std::vector<int>& response_ids) {
    require(view.fusion == Fusion::AF, "fusion weights are defined for AF views only");
    ad::NoGradGuard no_grad;
    FusionTrace trace;
    ForwardOpts opts;
    opts.trace = &trace;
    std::vector<int> prefix;
    prefix.push_back(Vocab::kBos);
    prefix.insert(prefix.end(), response_ids.begin(), response_ids.end());

    ForwardCtx ctx = make_ctx(view, opts);
    int64_t src_len = static_cast<int64_t>(query_ids.size());
    Tensor memory = run_encoder(ctx, query_ids, 1, src_len);
    run_decoder(ctx, memory, query_ids, prefix, 1, src_len,
                static_cast<int64_t>(prefix.size()));

    FusionReport report;
    report.positions = adapter_positions(view.base->cfg);
    size_t n_pos = report.positions.size();
    size_t n_adapt = view.adapters.size();
    report.lambda.assign(n_pos, std::vector<double>(n_adapt, 0.0));
    report.distance.assign(n_pos, std::vector<double>(n_adapt, 0.0));
    for (size_t p = 0; p < n_pos; ++p) {
        int64_t rows = trace.rows[p];
        if (rows == 0) {
            // Masked position: report the uniform fallback.
            for (size_t m = 0; m < n_adapt; ++m)
                report.lambda[p][m] = 1.0 / static_cast<double>(n_adapt);
            continue;
        }
        for (size_t m = 0; m < n_adapt; ++m) {
            report.lambda[p][m] = trace.lambda_sum[p][m] / static_cast<double>(rows);
            report.distance[p][m] = trace.dist_sum[p][m] / static_cast<double>(rows);
        }
    }
    return report;
}

}  // namespace mae::model
