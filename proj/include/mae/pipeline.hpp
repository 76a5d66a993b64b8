// Stage orchestration: score -> select -> pretrain -> finetune -> generate
// -> evaluate, with fixed artifact names and a reproducibility manifest.
#pragma once

#include <string>
#include <vector>

#include "mae/config.hpp"
#include "mae/inference.hpp"
#include "mae/metrics.hpp"
#include "mae/training.hpp"

namespace mae::pipeline {

enum class Stage { Score, Select, Pretrain, Finetune, Generate, Evaluate, All };

Stage stage_from_name(const std::string& name);

struct PipelineConfig {
    std::string train_path;
    std::string valid_path;
    std::string test_path;
    int64_t max_vocab = 4000;

    std::vector<ScoreMethod> methods;
    int64_t d_emb = 48;
    double alpha_override = -1.0;  // <0 means inverse-mean default
    double beta_override = -1.0;
    double ratio = 0.5;

    std::string fusion_mode = "af";  // af | pf
    model::Distance distance = model::Distance::L1;

    model::ModelConfig mcfg;  // vocab_size resolved from the training corpus
    train::TrainConfig tcfg;
    infer::GenConfig gcfg;

    uint64_t seed = 1;
    std::string out_dir;
    Config raw;

    static PipelineConfig load(const std::string& path);
    void apply_overrides(int64_t seed_override, const std::string& out_override);
};

// Fixed artifact names under the output directory.
std::string scores_file(const std::string& out, ScoreMethod m);
std::string subset_file(const std::string& out, ScoreMethod m);
std::string adapter_file(const std::string& out, ScoreMethod m);
inline std::string embeddings_file(const std::string& out) { return out + "/emb.ckpt"; }
inline std::string base_file(const std::string& out) { return out + "/base.ckpt"; }
inline std::string pf_order_file(const std::string& out) { return out + "/pf_order.txt"; }
inline std::string generations_path(const std::string& out) { return out + "/generations.tsv"; }
inline std::string heatmap_file(const std::string& out) { return out + "/heatmap.tsv"; }
inline std::string metrics_tsv(const std::string& out) { return out + "/metrics.tsv"; }
inline std::string metrics_text(const std::string& out) { return out + "/metrics.txt"; }
inline std::string manifest_file(const std::string& out) { return out + "/manifest.tsv"; }

void write_scores_tsv(const std::string& path, const std::vector<SampleScore>& scores);
std::vector<SampleScore> read_scores_tsv(const std::string& path, ScoreMethod method);
void write_subset(const std::string& path, const ViewSubset& subset);
ViewSubset read_subset(const std::string& path, const std::string& method, double ratio);

// Runs one stage (or the whole pipeline). Prerequisite artifacts must exist;
// the error message names the stage to run first.
void run(const PipelineConfig& cfg, Stage stage);

}  // namespace mae::pipeline
