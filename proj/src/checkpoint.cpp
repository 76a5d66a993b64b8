#include "mae/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace mae {

namespace {

constexpr char kBaseMagic[8] = {'M', 'A', 'E', 'B', 'A', 'S', 'E', '1'};
constexpr char kAdapterMagic[8] = {'M', 'A', 'E', 'A', 'D', 'P', 'T', '1'};
constexpr char kEmbedMagic[8] = {'M', 'A', 'E', 'E', 'M', 'B', 'D', '1'};

void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, uint64_t v) {
    write_u32(out, static_cast<uint32_t>(v));
    write_u32(out, static_cast<uint32_t>(v >> 32));
}

void write_f32(std::ostream& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(out, bits);
}

void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    require(in.good(), "checkpoint truncated");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t read_u64(std::istream& in) {
    uint64_t lo = read_u32(in);
    uint64_t hi = read_u32(in);
    return lo | (hi << 32);
}

float read_f32(std::istream& in) {
    uint32_t bits = read_u32(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

std::string read_string(std::istream& in) {
    uint32_t n = read_u32(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    require(in.good(), "checkpoint truncated");
    return s;
}

void write_config(std::ostream& out, const model::ModelConfig& cfg) {
    write_u32(out, static_cast<uint32_t>(cfg.vocab_size));
    write_u32(out, static_cast<uint32_t>(cfg.d_model));
    write_u32(out, static_cast<uint32_t>(cfg.n_enc_layers));
    write_u32(out, static_cast<uint32_t>(cfg.n_dec_layers));
    write_u32(out, static_cast<uint32_t>(cfg.n_heads));
    write_u32(out, static_cast<uint32_t>(cfg.d_ff));
    write_u32(out, static_cast<uint32_t>(cfg.adapter_down));
    write_u32(out, static_cast<uint32_t>(cfg.max_len));
    write_f32(out, static_cast<float>(cfg.label_smoothing));
    write_f32(out, static_cast<float>(cfg.dropout));
    write_u32(out, cfg.tie_output ? 1 : 0);
}

model::ModelConfig read_config(std::istream& in) {
    model::ModelConfig cfg;
    cfg.vocab_size = read_u32(in);
    cfg.d_model = read_u32(in);
    cfg.n_enc_layers = read_u32(in);
    cfg.n_dec_layers = read_u32(in);
    cfg.n_heads = read_u32(in);
    cfg.d_ff = read_u32(in);
    cfg.adapter_down = read_u32(in);
    cfg.max_len = read_u32(in);
    cfg.label_smoothing = read_f32(in);
    cfg.dropout = read_f32(in);
    cfg.tie_output = read_u32(in) != 0;
    return cfg;
}

void write_params(std::ostream& out, const model::ParamSet& params) {
    write_u32(out, static_cast<uint32_t>(params.items.size()));
    for (const auto& [name, t] : params.items) {
        write_string(out, name);
        write_u32(out, static_cast<uint32_t>(t.shape().size()));
        for (int64_t d : t.shape()) write_u64(out, static_cast<uint64_t>(d));
        for (ad::Real v : t.values()) write_f32(out, static_cast<float>(v));
    }
}

model::ParamSet read_params(std::istream& in) {
    model::ParamSet params;
    uint32_t n = read_u32(in);
    for (uint32_t i = 0; i < n; ++i) {
        std::string name = read_string(in);
        uint32_t rank = read_u32(in);
        ad::Shape shape;
        for (uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<int64_t>(read_u64(in)));
        std::vector<ad::Real> values(static_cast<size_t>(ad::shape_numel(shape)));
        for (auto& v : values) v = static_cast<ad::Real>(read_f32(in));
        params.add(name, ad::Tensor::param(std::move(shape), std::move(values)));
    }
    return params;
}

void check_magic(std::istream& in, const char* magic, const std::string& path) {
    char buf[8];
    in.read(buf, 8);
    require(in.good() && std::memcmp(buf, magic, 8) == 0,
            "not a recognized checkpoint: " + path);
    uint32_t version = read_u32(in);
    require(version == 1, "unsupported checkpoint version in " + path);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), "cannot write checkpoint: " + path);
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open checkpoint: " + path);
    return in;
}

}  // namespace

void save_base(const std::string& path, const model::BaseParams& base) {
    auto out = open_out(path);
    out.write(kBaseMagic, 8);
    write_u32(out, 1);
    write_config(out, base.cfg);
    write_params(out, base.params);
    require(out.good(), "failed writing checkpoint: " + path);
}

model::BaseParams load_base(const std::string& path) {
    auto in = open_in(path);
    check_magic(in, kBaseMagic, path);
    model::BaseParams base;
    base.cfg = read_config(in);
    base.cfg.validate();
    base.params = read_params(in);
    return base;
}

void save_adapter(const std::string& path, const model::AdapterParams& adapter,
                  const model::ModelConfig& cfg) {
    auto out = open_out(path);
    out.write(kAdapterMagic, 8);
    write_u32(out, 1);
    write_config(out, cfg);
    write_string(out, adapter.view);
    write_params(out, adapter.params);
    require(out.good(), "failed writing checkpoint: " + path);
}

model::AdapterParams load_adapter(const std::string& path, const model::ModelConfig& cfg) {
    auto in = open_in(path);
    check_magic(in, kAdapterMagic, path);
    model::ModelConfig stored = read_config(in);
    require(stored.d_model == cfg.d_model && stored.n_enc_layers == cfg.n_enc_layers &&
                stored.n_dec_layers == cfg.n_dec_layers && stored.adapter_down == cfg.adapter_down,
            "adapter checkpoint " + path + " does not match the base model configuration");
    model::AdapterParams adapter;
    adapter.view = read_string(in);
    adapter.params = read_params(in);
    return adapter;
}

void save_embeddings(const std::string& path, const EmbeddingTable& table) {
    auto out = open_out(path);
    out.write(kEmbedMagic, 8);
    write_u32(out, 1);
    write_u32(out, static_cast<uint32_t>(table.dim));
    write_u64(out, table.tokens.size());
    for (size_t i = 0; i < table.tokens.size(); ++i) {
        write_string(out, table.tokens[i]);
        for (int64_t d = 0; d < table.dim; ++d)
            write_f32(out, static_cast<float>(
                               table.vectors[i * static_cast<size_t>(table.dim) +
                                             static_cast<size_t>(d)]));
    }
    require(out.good(), "failed writing embeddings: " + path);
}

EmbeddingTable load_embeddings(const std::string& path) {
    auto in = open_in(path);
    check_magic(in, kEmbedMagic, path);
    EmbeddingTable table;
    table.dim = read_u32(in);
    uint64_t n = read_u64(in);
    table.vectors.resize(n * static_cast<uint64_t>(table.dim));
    for (uint64_t i = 0; i < n; ++i) {
        std::string token = read_string(in);
        table.index[token] = static_cast<int>(i);
        table.tokens.push_back(std::move(token));
        for (int64_t d = 0; d < table.dim; ++d)
            table.vectors[i * static_cast<uint64_t>(table.dim) + static_cast<uint64_t>(d)] =
                static_cast<double>(read_f32(in));
    }
    return table;
}

uint64_t file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open file for checksum: " + path);
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h = fnv1a64_bytes(buf, static_cast<size_t>(in.gcount()), h);
    return h;
}

}  // namespace mae
