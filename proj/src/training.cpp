#include "mae/training.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>

namespace mae::train {

using ad::Tensor;

void TrainConfig::validate() const {
    require(batch_size >= 1, "train config: batch_size must be positive");
    require(epochs >= 1, "train config: epochs must be at least 1");
    require(warmup_steps >= 1, "train config: warmup_steps must be at least 1");
    require(patience >= 1, "train config: patience must be at least 1");
    require(label_smoothing >= 0.0 && label_smoothing < 1.0,
            "train config: label_smoothing must be in [0, 1)");
}

void write_report(const std::string& path, const TrainReport& report) {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), "cannot write report: " + path);
    out << "epoch\ttrain_loss\tvalid_nll\tlambda_kd\n";
    char buf[128];
    std::snprintf(buf, sizeof(buf), "init\t-\t%.6f\t-\n", report.initial_valid_nll);
    out << buf;
    for (size_t e = 0; e < report.train_loss.size(); ++e) {
        std::string lam = "-";
        if (e < report.lambda_kd.size()) {
            std::snprintf(buf, sizeof(buf), "%.6f", report.lambda_kd[e]);
            lam = buf;
        }
        std::snprintf(buf, sizeof(buf), "%zu\t%.6f\t%.6f\t%s\n", e, report.train_loss[e],
                      report.valid_nll[e], lam.c_str());
        out << buf;
    }
    std::snprintf(buf, sizeof(buf), "best_epoch\t%lld\nsteps\t%lld\nwall_seconds\t%.3f\n",
                  static_cast<long long>(report.best_epoch),
                  static_cast<long long>(report.steps), report.wall_seconds);
    out << buf;
}

double lr_schedule(int64_t n_steps, int64_t warmup, int64_t d_model) {
    require(n_steps >= 1, "lr_schedule: step count starts at 1");
    double n = static_cast<double>(n_steps);
    double w = static_cast<double>(warmup);
    double lr = std::min(1.0 / std::sqrt(n), n / std::sqrt(w * w * w));
    return 2.0 * lr / std::sqrt(static_cast<double>(d_model));
}

Tensor nll_loss(const Tensor& logits, const std::vector<int>& targets,
                const std::vector<ad::Real>& weights, double label_smoothing) {
    return ad::cross_entropy_label_smoothing(logits, targets, weights,
                                             static_cast<ad::Real>(label_smoothing));
}

Tensor kd_loss(const Tensor& teacher_logits, const Tensor& student_logits,
               const std::vector<ad::Real>& weights) {
    require(teacher_logits.shape() == student_logits.shape(),
            "kd_loss: teacher/student logit shapes differ");
    int64_t vocab = teacher_logits.shape().back();
    int64_t rows = teacher_logits.numel() / vocab;

    // Teacher probabilities are plain values; no gradient flows to the teacher.
    std::vector<ad::Real> probs(static_cast<size_t>(teacher_logits.numel()));
    for (int64_t r = 0; r < rows; ++r) {
        const ad::Real* l = teacher_logits.values().data() + r * vocab;
        ad::Real* p = probs.data() + r * vocab;
        ad::Real mx = l[0];
        for (int64_t j = 1; j < vocab; ++j) mx = std::max(mx, l[j]);
        ad::Real sum = 0;
        for (int64_t j = 0; j < vocab; ++j) {
            p[j] = std::exp(l[j] - mx);
            sum += p[j];
        }
        for (int64_t j = 0; j < vocab; ++j) p[j] /= sum;
    }
    return ad::soft_cross_entropy(student_logits, probs, weights);
}

double kd_weight(int64_t epoch, int64_t total_epochs) {
    require(total_epochs >= 1, "kd_weight: total epochs must be at least 1");
    require(epoch >= 0 && epoch < total_epochs, "kd_weight: epoch out of range");
    return 1.0 - static_cast<double>(epoch) / static_cast<double>(total_epochs);
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, const TrainConfig& cfg, int64_t d_model)
    : params_(std::move(params)),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.adam_eps),
      warmup_(cfg.warmup_steps),
      d_model_(d_model) {
    for (const auto& p : params_) {
        m_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
        v_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    }
}

void AdamOptimizer::step() {
    ++t_;
    double lr = lr_schedule(t_, warmup_, d_model_);
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = params_[pi];
        if (!p.has_grad()) continue;
        const auto& g = p.grad();
        auto& vals = p.values();
        for (size_t i = 0; i < vals.size(); ++i) {
            double gi = static_cast<double>(g[i]);
            m_[pi][i] = beta1_ * m_[pi][i] + (1.0 - beta1_) * gi;
            v_[pi][i] = beta2_ * v_[pi][i] + (1.0 - beta2_) * gi * gi;
            double mhat = m_[pi][i] / bc1;
            double vhat = v_[pi][i] / bc2;
            vals[i] -= static_cast<ad::Real>(lr * mhat / (std::sqrt(vhat) + eps_));
        }
        p.zero_grad();
    }
}

namespace {

std::vector<const DialoguePair*> collect_pairs(const Corpus& corpus,
                                               const std::vector<int64_t>& ids) {
    std::vector<const DialoguePair*> out;
    out.reserve(ids.size());
    for (int64_t id : ids) {
        require(id >= 0 && id < corpus.size(), "sample id out of range: " + std::to_string(id));
        out.push_back(&corpus.pairs[static_cast<size_t>(id)]);
    }
    return out;
}

std::vector<int64_t> all_ids(const Corpus& corpus) {
    std::vector<int64_t> ids(static_cast<size_t>(corpus.size()));
    for (int64_t i = 0; i < corpus.size(); ++i) ids[static_cast<size_t>(i)] = i;
    return ids;
}

struct ParamSnapshot {
    std::vector<std::vector<ad::Real>> values;

    static ParamSnapshot take(const model::ParamSet& params) {
        ParamSnapshot s;
        for (const auto& [name, t] : params.items) {
            (void)name;
            s.values.push_back(t.values());
        }
        return s;
    }

    void restore(model::ParamSet& params) const {
        require(values.size() == params.items.size(), "snapshot size mismatch");
        for (size_t i = 0; i < values.size(); ++i) params.items[i].second.values() = values[i];
    }
};

// Shared epoch loop. `make_loss` builds the loss for one batch; it sees the
// current epoch so progressive fusion can schedule its distillation weight.
using LossFn = std::function<Tensor(const model::Batch&, int64_t epoch, uint64_t step)>;

TrainReport run_training(const model::ModelView& eval_view, model::ParamSet& trained,
                         const std::vector<int64_t>& sample_ids, const Corpus& train,
                         const Corpus& valid, const Vocab& vocab, const TrainConfig& tcfg,
                         int64_t d_model, int64_t max_len, const LossFn& make_loss,
                         bool early_stop, const std::vector<double>& lambda_schedule) {
    auto started = std::chrono::steady_clock::now();
    TrainReport report;
    report.lambda_kd = lambda_schedule;

    std::vector<Tensor> trainable;
    for (auto& [name, t] : trained.items) {
        (void)name;
        trainable.push_back(t);
    }
    AdamOptimizer optimizer(trainable, tcfg, d_model);

    report.initial_valid_nll = evaluate_nll(eval_view, valid, vocab, tcfg.batch_size);
    double best_nll = report.initial_valid_nll;
    ParamSnapshot best = ParamSnapshot::take(trained);
    int64_t best_epoch = -1;
    int64_t epochs_since_best = 0;
    uint64_t step = 0;
    bool stop = false;

    for (int64_t epoch = 0; epoch < tcfg.epochs && !stop; ++epoch) {
        std::vector<int64_t> order = sample_ids;
        Rng shuffle_rng(splitmix64(tcfg.seed ^ fnv1a64("epoch") ^ static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        int64_t batches = 0;
        for (size_t off = 0; off < order.size(); off += static_cast<size_t>(tcfg.batch_size)) {
            size_t end = std::min(order.size(), off + static_cast<size_t>(tcfg.batch_size));
            std::vector<int64_t> batch_ids(order.begin() + static_cast<int64_t>(off),
                                           order.begin() + static_cast<int64_t>(end));
            model::Batch batch = model::make_batch(collect_pairs(train, batch_ids), vocab, max_len);

            ++step;
            Tensor loss = make_loss(batch, epoch, step);
            double loss_value = loss.item();
            if (!std::isfinite(loss_value)) {
                std::fprintf(stderr, "training diverged at step %llu (loss=%f)\n",
                             static_cast<unsigned long long>(step), loss_value);
                fail("training diverged: non-finite loss");
            }
            loss_sum += loss_value;
            ++batches;
            ad::backward(loss);
            optimizer.step();

            if (tcfg.max_steps > 0 && static_cast<int64_t>(step) >= tcfg.max_steps) {
                stop = true;
                break;
            }
        }

        report.train_loss.push_back(batches ? loss_sum / static_cast<double>(batches) : 0.0);
        double nll = evaluate_nll(eval_view, valid, vocab, tcfg.batch_size);
        report.valid_nll.push_back(nll);

        if (nll < best_nll) {
            best_nll = nll;
            best = ParamSnapshot::take(trained);
            best_epoch = epoch;
            epochs_since_best = 0;
        } else if (early_stop) {
            ++epochs_since_best;
            if (epochs_since_best >= tcfg.patience) stop = true;
        }
    }

    if (early_stop) best.restore(trained);
    report.best_epoch = best_epoch;
    report.steps = static_cast<int64_t>(step);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

}  // namespace

double evaluate_nll(const model::ModelView& view, const Corpus& corpus, const Vocab& vocab,
                    int64_t batch_size) {
    ad::NoGradGuard no_grad;
    int64_t max_len = view.base->cfg.max_len;
    double total = 0.0;
    double weight = 0.0;
    for (int64_t off = 0; off < corpus.size(); off += batch_size) {
        std::vector<int64_t> ids;
        for (int64_t i = off; i < std::min(corpus.size(), off + batch_size); ++i) ids.push_back(i);
        model::Batch batch = model::make_batch(collect_pairs(corpus, ids), vocab, max_len);
        model::ForwardOpts opts;
        Tensor logits = model::forward_batch(view, batch, opts);
        double w = 0.0;
        for (ad::Real x : batch.tgt_weight) w += static_cast<double>(x);
        Tensor loss = nll_loss(logits, batch.tgt_out, batch.tgt_weight, 0.0);
        total += loss.item() * w;
        weight += w;
    }
    require(weight > 0.0, "evaluate_nll: empty corpus");
    return total / weight;
}

model::BaseParams pretrain_base(const Corpus& train, const Corpus& valid, const Vocab& vocab,
                                const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                                TrainReport* report) {
    tcfg.validate();
    model::BaseParams base = model::init_base(mcfg, tcfg.seed);
    base.params.set_trainable(true);

    model::ModelView view;
    view.base = &base;
    view.fusion = model::Fusion::None;

    LossFn loss_fn = [&](const model::Batch& batch, int64_t, uint64_t step) {
        model::ForwardOpts opts;
        opts.train = true;
        opts.seed = tcfg.seed;
        opts.step = step;
        Tensor logits = model::forward_batch(view, batch, opts);
        return nll_loss(logits, batch.tgt_out, batch.tgt_weight, tcfg.label_smoothing);
    };

    TrainReport r = run_training(view, base.params, all_ids(train), train, valid, vocab, tcfg,
                                 mcfg.d_model, mcfg.max_len, loss_fn, /*early_stop=*/true, {});
    if (report) *report = r;
    base.params.set_trainable(false);
    return base;
}

model::AdapterParams finetune_adapter(model::BaseParams& base, const ViewSubset& subset,
                                      const Corpus& train, const Corpus& valid,
                                      const Vocab& vocab, const TrainConfig& tcfg,
                                      const std::string& view_tag, TrainReport* report) {
    tcfg.validate();
    require(!subset.ids.empty(), "cannot fine-tune on an empty subset");
    base.params.set_trainable(false);

    model::AdapterParams adapter =
        model::init_adapter(base.cfg, view_tag, splitmix64(tcfg.seed ^ fnv1a64(view_tag)));
    adapter.params.set_trainable(true);

    model::ModelView view;
    view.base = &base;
    view.adapters = {&adapter};
    view.fusion = model::Fusion::Single;

    LossFn loss_fn = [&](const model::Batch& batch, int64_t, uint64_t step) {
        model::ForwardOpts opts;
        opts.train = true;
        opts.seed = splitmix64(tcfg.seed ^ fnv1a64("adapter." + view_tag));
        opts.step = step;
        Tensor logits = model::forward_batch(view, batch, opts);
        return nll_loss(logits, batch.tgt_out, batch.tgt_weight, tcfg.label_smoothing);
    };

    // Adapters run their full budget: the view intentionally biases the
    // model away from the raw distribution, so full-set validation NLL is
    // logged for monitoring but does not gate the result.
    TrainReport r = run_training(view, adapter.params, subset.ids, train, valid, vocab, tcfg,
                                 base.cfg.d_model, base.cfg.max_len, loss_fn,
                                 /*early_stop=*/false, {});
    if (report) *report = r;
    adapter.params.set_trainable(false);
    return adapter;
}

model::AdapterParams finetune_progressive(model::BaseParams& base,
                                          const std::vector<const model::AdapterParams*>& prev,
                                          const ViewSubset& subset, const Corpus& train,
                                          const Corpus& valid, const Vocab& vocab,
                                          const TrainConfig& tcfg, const std::string& view_tag,
                                          TrainReport* report) {
    tcfg.validate();
    require(!subset.ids.empty(), "cannot fine-tune on an empty subset");
    base.params.set_trainable(false);

    model::AdapterParams adapter =
        model::init_adapter(base.cfg, view_tag, splitmix64(tcfg.seed ^ fnv1a64(view_tag)));
    adapter.params.set_trainable(true);

    // Teacher: frozen base plus the previously trained adapters, stacked in
    // their training order. Student: the same stack with the new adapter on
    // top at every position.
    model::ModelView teacher;
    teacher.base = &base;
    teacher.adapters = prev;
    teacher.fusion = prev.empty() ? model::Fusion::None : model::Fusion::Stack;

    model::ModelView student;
    student.base = &base;
    student.adapters = prev;
    student.adapters.push_back(&adapter);
    student.fusion = model::Fusion::Stack;

    std::vector<double> schedule;
    for (int64_t e = 0; e < tcfg.epochs; ++e) schedule.push_back(kd_weight(e, tcfg.epochs));

    LossFn loss_fn = [&](const model::Batch& batch, int64_t epoch, uint64_t step) {
        model::ForwardOpts opts;
        opts.train = true;
        opts.seed = splitmix64(tcfg.seed ^ fnv1a64("pf." + view_tag));
        opts.step = step;
        Tensor student_logits = model::forward_batch(student, batch, opts);
        Tensor loss = nll_loss(student_logits, batch.tgt_out, batch.tgt_weight,
                               tcfg.label_smoothing);
        if (!prev.empty()) {
            Tensor teacher_logits;
            {
                ad::NoGradGuard no_grad;
                model::ForwardOpts teacher_opts;  // eval mode
                teacher_logits = model::forward_batch(teacher, batch, teacher_opts);
            }
            double lam = kd_weight(epoch, tcfg.epochs);
            Tensor kd = kd_loss(teacher_logits, student_logits, batch.tgt_weight);
            loss = ad::add(loss, ad::scale(kd, static_cast<ad::Real>(lam)));
        }
        return loss;
    };

    // No early stop: the distillation schedule is defined over all epochs.
    TrainReport r = run_training(student, adapter.params, subset.ids, train, valid, vocab, tcfg,
                                 base.cfg.d_model, base.cfg.max_len, loss_fn,
                                 /*early_stop=*/false, schedule);
    if (report) *report = r;
    adapter.params.set_trainable(false);
    return adapter;
}

std::vector<ScoreMethod> resolve_pf_order(const std::vector<ScoreMethod>& methods,
                                          const std::string& spec, uint64_t seed) {
    if (spec == "random") {
        std::vector<ScoreMethod> order = methods;
        Rng rng(splitmix64(seed ^ fnv1a64("pf_order")));
        rng.shuffle(order);
        return order;
    }
    std::vector<ScoreMethod> order;
    std::string token;
    for (char c : spec + ",") {
        if (c == ',') {
            if (!token.empty()) order.push_back(method_from_name(token));
            token.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            token.push_back(c);
        }
    }
    require(order.size() == methods.size(), "pf_order must list every enabled method once");
    for (ScoreMethod m : methods)
        require(std::count(order.begin(), order.end(), m) == 1,
                "pf_order must be a permutation of the enabled methods");
    return order;
}

}  // namespace mae::train
