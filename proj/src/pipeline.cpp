#include "mae/pipeline.hpp"

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "mae/checkpoint.hpp"

namespace mae::pipeline {

namespace fs = std::filesystem;

Stage stage_from_name(const std::string& name) {
    if (name == "score") return Stage::Score;
    if (name == "select") return Stage::Select;
    if (name == "pretrain") return Stage::Pretrain;
    if (name == "finetune") return Stage::Finetune;
    if (name == "generate") return Stage::Generate;
    if (name == "evaluate") return Stage::Evaluate;
    if (name == "all") return Stage::All;
    fail("unknown stage: " + name);
}

PipelineConfig PipelineConfig::load(const std::string& path) {
    Config raw = Config::parse_file(path);
    PipelineConfig cfg;
    cfg.raw = raw;

    cfg.train_path = raw.get_string("corpus.train");
    cfg.valid_path = raw.get_string("corpus.valid");
    cfg.test_path = raw.get_string("corpus.test");
    cfg.max_vocab = raw.get_int("corpus.max_vocab", 4000);

    std::string methods = raw.get_string("scoring.methods", "con,ent,spe");
    std::string token;
    for (char c : methods + ",") {
        if (c == ',') {
            if (!token.empty()) cfg.methods.push_back(method_from_name(token));
            token.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            token.push_back(c);
        }
    }
    require(!cfg.methods.empty(), "config: at least one scoring method must be enabled");
    cfg.d_emb = raw.get_int("scoring.d_emb", 48);
    cfg.alpha_override = raw.get_real("scoring.alpha", -1.0);
    cfg.beta_override = raw.get_real("scoring.beta", -1.0);

    cfg.ratio = raw.get_real("selection.ratio", 0.5);

    cfg.fusion_mode = raw.get_string("fusion.mode", "af");
    require(cfg.fusion_mode == "af" || cfg.fusion_mode == "pf",
            "config: fusion.mode must be af or pf");
    cfg.distance = model::distance_from_name(raw.get_string("fusion.distance", "l1"));

    cfg.mcfg.d_model = raw.get_int("model.d_model", 64);
    cfg.mcfg.n_enc_layers = raw.get_int("model.n_enc_layers", 2);
    cfg.mcfg.n_dec_layers = raw.get_int("model.n_dec_layers", 2);
    cfg.mcfg.n_heads = raw.get_int("model.n_heads", 2);
    cfg.mcfg.d_ff = raw.get_int("model.d_ff", 256);
    cfg.mcfg.adapter_down = raw.get_int("model.adapter_down", 16);
    cfg.mcfg.label_smoothing = raw.get_real("model.label_smoothing", 0.1);
    cfg.mcfg.dropout = raw.get_real("model.dropout", 0.1);
    cfg.mcfg.max_len = raw.get_int("model.max_len", 32);
    cfg.mcfg.tie_output = raw.get_bool("model.tie_output", true);

    cfg.tcfg.batch_size = raw.get_int("train.batch_size", 32);
    cfg.tcfg.epochs = raw.get_int("train.epochs", 10);
    cfg.tcfg.warmup_steps = raw.get_int("train.warmup_steps", 400);
    cfg.tcfg.patience = raw.get_int("train.patience", 3);
    cfg.tcfg.beta1 = raw.get_real("train.beta1", 0.9);
    cfg.tcfg.beta2 = raw.get_real("train.beta2", 0.98);
    cfg.tcfg.adam_eps = raw.get_real("train.adam_eps", 1e-9);
    cfg.tcfg.label_smoothing = cfg.mcfg.label_smoothing;
    cfg.tcfg.pf_order = raw.get_string("train.pf_order", "random");

    cfg.gcfg.beam_size = raw.get_int("generate.beam", 5);
    cfg.gcfg.max_len = raw.get_int("generate.max_len", cfg.mcfg.max_len);

    cfg.seed = static_cast<uint64_t>(raw.get_int("run.seed", 1));
    cfg.out_dir = raw.get_string("run.out", "runs/default");
    cfg.tcfg.seed = cfg.seed;
    return cfg;
}

void PipelineConfig::apply_overrides(int64_t seed_override, const std::string& out_override) {
    if (seed_override >= 0) {
        seed = static_cast<uint64_t>(seed_override);
        tcfg.seed = seed;
        raw.set("run.seed", std::to_string(seed_override));
    }
    if (!out_override.empty()) {
        out_dir = out_override;
        raw.set("run.out", out_override);
    }
}

std::string scores_file(const std::string& out, ScoreMethod m) {
    return out + "/scores_" + method_name(m) + ".tsv";
}
std::string subset_file(const std::string& out, ScoreMethod m) {
    return out + "/subset_" + method_name(m) + ".txt";
}
std::string adapter_file(const std::string& out, ScoreMethod m) {
    return out + "/adapter_" + method_name(m) + ".ckpt";
}

void write_scores_tsv(const std::string& path, const std::vector<SampleScore>& scores) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    require(out.good(), "cannot write scores: " + path);
    char buf[64];
    for (const auto& s : scores) {
        std::snprintf(buf, sizeof(buf), "%lld\t%.6f\n", static_cast<long long>(s.sample_id),
                      s.value);
        out << buf;
    }
}

std::vector<SampleScore> read_scores_tsv(const std::string& path, ScoreMethod method) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open scores: " + path);
    std::vector<SampleScore> scores;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        size_t tab = line.find('\t');
        require(tab != std::string::npos, "bad score line: " + line);
        scores.push_back({std::stoll(line.substr(0, tab)), method, std::stod(line.substr(tab + 1))});
    }
    require(!scores.empty(), "empty score file: " + path);
    return scores;
}

void write_subset(const std::string& path, const ViewSubset& subset) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    require(out.good(), "cannot write subset: " + path);
    for (int64_t id : subset.ids) out << id << '\n';
}

ViewSubset read_subset(const std::string& path, const std::string& method, double ratio) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open subset: " + path);
    ViewSubset subset;
    subset.method = method;
    subset.ratio = ratio;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) subset.ids.push_back(std::stoll(line));
    }
    require(!subset.ids.empty(), "empty subset file: " + path);
    return subset;
}

namespace {

void need_artifact(const std::string& path, const std::string& run_first) {
    require(fs::exists(path),
            "missing artifact " + path + "; run '" + run_first + "' first");
}

// Manifest: sorted key<TAB>value lines, merged across stage runs. Training
// reports are listed without checksums (they contain wall-clock times).
class Manifest {
public:
    explicit Manifest(const PipelineConfig& cfg) : cfg_(cfg) {
        path_ = manifest_file(cfg.out_dir);
        std::ifstream in(path_, std::ios::binary);
        std::string line;
        while (in.good() && std::getline(in, line)) {
            size_t tab = line.find('\t');
            if (tab != std::string::npos)
                entries_[line.substr(0, tab)] = line.substr(tab + 1);
        }
        char hash[32];
        std::snprintf(hash, sizeof(hash), "%016llx",
                      static_cast<unsigned long long>(cfg.raw.hash()));
        entries_["config_hash"] = hash;
        entries_["seed"] = std::to_string(cfg.seed);
    }

    void record(const std::string& artifact) {
        char hash[32];
        std::snprintf(hash, sizeof(hash), "%016llx",
                      static_cast<unsigned long long>(file_checksum(artifact)));
        entries_["artifact." + fs::path(artifact).filename().string()] = hash;
    }

    void set(const std::string& key, const std::string& value) { entries_[key] = value; }

    void save() {
        std::ofstream out(path_, std::ios::trunc | std::ios::binary);
        require(out.good(), "cannot write manifest: " + path_);
        for (const auto& [k, v] : entries_) out << k << '\t' << v << '\n';
    }

private:
    const PipelineConfig& cfg_;
    std::string path_;
    std::map<std::string, std::string> entries_;
};

struct LoadedData {
    Corpus train, valid, test;
    Vocab vocab;
};

LoadedData load_data(const PipelineConfig& cfg) {
    LoadedData d;
    d.train = load_corpus(cfg.train_path, Split::Train);
    d.valid = load_corpus(cfg.valid_path, Split::Valid);
    d.test = load_corpus(cfg.test_path, Split::Test);
    d.vocab = build_vocab(d.train, cfg.max_vocab);
    return d;
}

model::ModelConfig resolved_mcfg(const PipelineConfig& cfg, const Vocab& vocab) {
    model::ModelConfig mcfg = cfg.mcfg;
    mcfg.vocab_size = vocab.size();
    return mcfg;
}

void run_score(const PipelineConfig& cfg, Manifest& manifest) {
    Corpus train = load_corpus(cfg.train_path, Split::Train);
    CorpusStats stats = build_corpus_stats(train);
    EmbeddingTable emb = build_embeddings(train, cfg.d_emb, cfg.seed);
    save_embeddings(embeddings_file(cfg.out_dir), emb);
    manifest.record(embeddings_file(cfg.out_dir));

    ConsistencyWeights weights;
    bool need_con = false;
    for (ScoreMethod m : cfg.methods) need_con = need_con || m == ScoreMethod::Con;
    if (need_con) {
        weights = compute_consistency_weights(train, stats, emb);
        if (cfg.alpha_override > 0) weights.alpha = cfg.alpha_override;
        if (cfg.beta_override > 0) weights.beta = cfg.beta_override;
    }

    for (ScoreMethod m : cfg.methods) {
        auto scores = score_corpus(m, train, stats, &emb, &weights);
        write_scores_tsv(scores_file(cfg.out_dir, m), scores);
        manifest.record(scores_file(cfg.out_dir, m));
    }
}

void run_select(const PipelineConfig& cfg, Manifest& manifest) {
    for (ScoreMethod m : cfg.methods) {
        need_artifact(scores_file(cfg.out_dir, m), "score");
        auto scores = read_scores_tsv(scores_file(cfg.out_dir, m), m);
        ViewSubset subset = rank_and_select(scores, cfg.ratio, default_direction(m));
        write_subset(subset_file(cfg.out_dir, m), subset);
        manifest.record(subset_file(cfg.out_dir, m));
    }
}

void run_pretrain(const PipelineConfig& cfg, Manifest& manifest) {
    LoadedData d = load_data(cfg);
    model::ModelConfig mcfg = resolved_mcfg(cfg, d.vocab);
    train::TrainReport report;
    model::BaseParams base = train::pretrain_base(d.train, d.valid, d.vocab, mcfg, cfg.tcfg,
                                                  &report);
    save_base(base_file(cfg.out_dir), base);
    train::write_report(cfg.out_dir + "/base_report.tsv", report);
    manifest.record(base_file(cfg.out_dir));
}

void run_finetune(const PipelineConfig& cfg, Manifest& manifest) {
    need_artifact(base_file(cfg.out_dir), "pretrain");
    LoadedData d = load_data(cfg);
    model::BaseParams base = load_base(base_file(cfg.out_dir));
    base.params.set_trainable(false);

    std::map<ScoreMethod, ViewSubset> subsets;
    for (ScoreMethod m : cfg.methods) {
        need_artifact(subset_file(cfg.out_dir, m), "select");
        subsets[m] = read_subset(subset_file(cfg.out_dir, m), method_name(m), cfg.ratio);
    }

    if (cfg.fusion_mode == "af") {
        for (ScoreMethod m : cfg.methods) {
            train::TrainReport report;
            model::AdapterParams adapter = train::finetune_adapter(
                base, subsets.at(m), d.train, d.valid, d.vocab, cfg.tcfg, method_name(m),
                &report);
            save_adapter(adapter_file(cfg.out_dir, m), adapter, base.cfg);
            train::write_report(cfg.out_dir + "/adapter_" + method_name(m) + "_report.tsv",
                                report);
            manifest.record(adapter_file(cfg.out_dir, m));
        }
        return;
    }

    // Progressive fusion: adapters trained sequentially in the drawn order.
    std::vector<ScoreMethod> order =
        train::resolve_pf_order(cfg.methods, cfg.tcfg.pf_order, cfg.seed);
    {
        std::ofstream out(pf_order_file(cfg.out_dir), std::ios::trunc | std::ios::binary);
        for (ScoreMethod m : order) out << method_name(m) << '\n';
    }
    manifest.record(pf_order_file(cfg.out_dir));
    std::string order_str;
    for (ScoreMethod m : order) order_str += (order_str.empty() ? "" : ",") + method_name(m);
    manifest.set("pf_order", order_str);

    std::vector<model::AdapterParams> trained;
    trained.reserve(order.size());
    for (ScoreMethod m : order) {
        std::vector<const model::AdapterParams*> prev;
        for (const auto& a : trained) prev.push_back(&a);
        train::TrainReport report;
        model::AdapterParams adapter = train::finetune_progressive(
            base, prev, subsets.at(m), d.train, d.valid, d.vocab, cfg.tcfg, method_name(m),
            &report);
        save_adapter(adapter_file(cfg.out_dir, m), adapter, base.cfg);
        train::write_report(cfg.out_dir + "/adapter_" + method_name(m) + "_report.tsv", report);
        manifest.record(adapter_file(cfg.out_dir, m));
        trained.push_back(std::move(adapter));
    }
}

std::vector<ScoreMethod> read_pf_order(const PipelineConfig& cfg) {
    std::ifstream in(pf_order_file(cfg.out_dir), std::ios::binary);
    require(in.good(), "cannot open pf order file");
    std::vector<ScoreMethod> order;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) order.push_back(method_from_name(line));
    return order;
}

void run_generate(const PipelineConfig& cfg, Manifest& manifest) {
    need_artifact(base_file(cfg.out_dir), "pretrain");
    for (ScoreMethod m : cfg.methods) need_artifact(adapter_file(cfg.out_dir, m), "finetune");

    LoadedData d = load_data(cfg);
    model::BaseParams base = load_base(base_file(cfg.out_dir));
    base.params.set_trainable(false);

    std::vector<ScoreMethod> order = cfg.methods;
    if (cfg.fusion_mode == "pf") {
        need_artifact(pf_order_file(cfg.out_dir), "finetune");
        order = read_pf_order(cfg);
    }
    std::vector<model::AdapterParams> adapters;
    adapters.reserve(order.size());
    for (ScoreMethod m : order)
        adapters.push_back(load_adapter(adapter_file(cfg.out_dir, m), base.cfg));

    model::ModelView view;
    view.base = &base;
    for (const auto& a : adapters) view.adapters.push_back(&a);
    view.fusion = cfg.fusion_mode == "af" ? model::Fusion::AF : model::Fusion::Stack;
    view.distance = cfg.distance;

    auto generations = infer::generate_set(view, d.test, d.vocab, cfg.gcfg);
    infer::write_generations(generations_path(cfg.out_dir), generations);
    manifest.record(generations_path(cfg.out_dir));

    if (view.fusion == model::Fusion::AF && view.adapters.size() > 1) {
        std::vector<const DialoguePair*> samples;
        for (int64_t i = 0; i < std::min<int64_t>(8, d.test.size()); ++i)
            samples.push_back(&d.test.pairs[static_cast<size_t>(i)]);
        infer::dump_fusion_heatmap(view, samples, d.vocab, heatmap_file(cfg.out_dir));
        manifest.record(heatmap_file(cfg.out_dir));
    }
}

void run_evaluate(const PipelineConfig& cfg, Manifest& manifest) {
    need_artifact(generations_path(cfg.out_dir), "generate");
    need_artifact(embeddings_file(cfg.out_dir), "score");

    Corpus train = load_corpus(cfg.train_path, Split::Train);
    Corpus test = load_corpus(cfg.test_path, Split::Test);
    CorpusStats stats = build_corpus_stats(train);
    EmbeddingTable emb = load_embeddings(embeddings_file(cfg.out_dir));

    auto generated = infer::read_generations(generations_path(cfg.out_dir));
    require(generated.size() == test.pairs.size(),
            "generation count does not match the test set");
    std::vector<std::pair<std::string, std::string>> reference;
    for (const auto& p : test.pairs) reference.emplace_back(p.raw_query, p.raw_response);

    metrics::MetricTable table = metrics::evaluate_all(generated, reference, stats, emb);
    metrics::write_metric_tsv(metrics_tsv(cfg.out_dir), table);
    metrics::write_metric_text(metrics_text(cfg.out_dir), table);
    manifest.record(metrics_tsv(cfg.out_dir));
    manifest.record(metrics_text(cfg.out_dir));
}

}  // namespace

void run(const PipelineConfig& cfg, Stage stage) {
    require(!cfg.out_dir.empty(), "output directory not set");
    fs::create_directories(cfg.out_dir);
    Manifest manifest(cfg);

    auto dispatch = [&](Stage s) {
        switch (s) {
            case Stage::Score: run_score(cfg, manifest); break;
            case Stage::Select: run_select(cfg, manifest); break;
            case Stage::Pretrain: run_pretrain(cfg, manifest); break;
            case Stage::Finetune: run_finetune(cfg, manifest); break;
            case Stage::Generate: run_generate(cfg, manifest); break;
            case Stage::Evaluate: run_evaluate(cfg, manifest); break;
            case Stage::All: break;
        }
    };

    if (stage == Stage::All) {
        for (Stage s : {Stage::Score, Stage::Select, Stage::Pretrain, Stage::Finetune,
                        Stage::Generate, Stage::Evaluate})
            dispatch(s);
    } else {
        dispatch(stage);
    }
    manifest.save();
}

}  // namespace mae::pipeline
