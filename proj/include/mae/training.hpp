// Loss functions, the warm-up learning-rate schedule, Adam, and the three
// training loops: base-model pre-training, per-view adapter fine-tuning, and
// progressive fusion with knowledge distillation.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mae/model.hpp"
#include "mae/selection.hpp"

namespace mae::train {

struct TrainConfig {
    int64_t batch_size = 32;
    int64_t epochs = 10;
    int64_t warmup_steps = 400;
    int64_t patience = 3;
    uint64_t seed = 1;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double adam_eps = 1e-9;
    double label_smoothing = 0.1;
    std::string pf_order = "random";  // or an explicit list like "con,ent,spe"
    int64_t max_steps = 0;            // 0 = no cap

    void validate() const;
};

struct TrainReport {
    std::vector<double> train_loss;  // per epoch, label-smoothed
    std::vector<double> valid_nll;   // per epoch, unsmoothed
    std::vector<double> lambda_kd;   // per epoch, progressive fusion only
    double initial_valid_nll = 0.0;
    int64_t best_epoch = -1;
    int64_t steps = 0;
    double wall_seconds = 0.0;
};

void write_report(const std::string& path, const TrainReport& report);

// lr = 2 * min(1/sqrt(n), n / warmup^1.5) / sqrt(d_model)
double lr_schedule(int64_t n_steps, int64_t warmup, int64_t d_model);

// Mean label-smoothed cross-entropy (nats) over positions with weight > 0.
ad::Tensor nll_loss(const ad::Tensor& logits, const std::vector<int>& targets,
                    const std::vector<ad::Real>& weights, double label_smoothing);

// Mean over weighted positions of the cross-entropy between the (constant)
// teacher distribution and the student distribution.
ad::Tensor kd_loss(const ad::Tensor& teacher_logits, const ad::Tensor& student_logits,
                   const std::vector<ad::Real>& weights);

// lambda_kd for epoch e of E total: 1 - e/E.
double kd_weight(int64_t epoch, int64_t total_epochs);

class AdamOptimizer {
public:
    AdamOptimizer(std::vector<ad::Tensor> params, const TrainConfig& cfg, int64_t d_model);

    void step();  // applies one update using the schedule, then clears grads

private:
    std::vector<ad::Tensor> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    double beta1_, beta2_, eps_;
    int64_t warmup_, d_model_;
    int64_t t_ = 0;
};

// Mean unsmoothed NLL over a whole corpus under the given view.
double evaluate_nll(const model::ModelView& view, const Corpus& corpus, const Vocab& vocab,
                    int64_t batch_size);

// Optimizes the base parameters on the full training set, early-stopping on
// validation NLL and restoring the best epoch's weights.
model::BaseParams pretrain_base(const Corpus& train, const Corpus& valid, const Vocab& vocab,
                                const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                                TrainReport* report);

// Trains one adapter on a view-specific subset with the base frozen.
model::AdapterParams finetune_adapter(model::BaseParams& base, const ViewSubset& subset,
                                      const Corpus& train, const Corpus& valid,
                                      const Vocab& vocab, const TrainConfig& tcfg,
                                      const std::string& view, TrainReport* report);

// Progressive fusion step: the new adapter trains on top of the frozen base
// plus previously trained adapters (stacked in order); the loss adds a
// distillation term against that frozen stack, with linearly decaying
// weight. Runs all configured epochs so the schedule completes.
model::AdapterParams finetune_progressive(model::BaseParams& base,
                                          const std::vector<const model::AdapterParams*>& prev,
                                          const ViewSubset& subset, const Corpus& train,
                                          const Corpus& valid, const Vocab& vocab,
                                          const TrainConfig& tcfg, const std::string& view,
                                          TrainReport* report);

// Resolves the progressive-fusion training order: either the explicit list
// from the config or a random permutation drawn once from the seed.
std::vector<ScoreMethod> resolve_pf_order(const std::vector<ScoreMethod>& methods,
                                          const std::string& spec, uint64_t seed);

}  // namespace mae::train
