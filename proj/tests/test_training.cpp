#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "mae/training.hpp"

using namespace mae;
using namespace mae::train;

namespace {

Corpus tiny_corpus(int64_t n, uint64_t seed) {
    // Small closed-vocabulary pairs the model can memorize.
    static const std::vector<std::string> words = {"sun", "moon", "star", "cloud",
                                                   "rain", "wind", "snow", "fog"};
    Rng rng(seed);
    Corpus corpus;
    for (int64_t i = 0; i < n; ++i) {
        DialoguePair pair;
        pair.id = i;
        size_t a = static_cast<size_t>(rng.next_below(words.size()));
        size_t b = static_cast<size_t>(rng.next_below(words.size()));
        pair.raw_query = words[a] + " " + words[b];
        pair.raw_response = words[b] + " " + words[a];
        pair.query = tokenize(pair.raw_query);
        pair.response = tokenize(pair.raw_response);
        corpus.pairs.push_back(std::move(pair));
    }
    return corpus;
}

model::ModelConfig tiny_model(int64_t vocab) {
    model::ModelConfig cfg;
    cfg.vocab_size = vocab;
    cfg.d_model = 16;
    cfg.n_enc_layers = 1;
    cfg.n_dec_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.adapter_down = 4;
    cfg.dropout = 0.0;
    cfg.max_len = 8;
    return cfg;
}

TrainConfig fast_train(uint64_t seed) {
    TrainConfig tcfg;
    tcfg.batch_size = 8;
    tcfg.epochs = 3;
    tcfg.warmup_steps = 30;
    tcfg.seed = seed;
    return tcfg;
}

}  // namespace

TEST_CASE("lr schedule reference values") {
    CHECK(lr_schedule(32000, 32000, 512) == doctest::Approx(4.941e-4).epsilon(2e-4));
    CHECK(std::abs(lr_schedule(32000, 32000, 512) - 4.941e-4) < 1e-7);
    CHECK(std::abs(lr_schedule(1, 32000, 512) - 1.544e-8) < 1e-11);
}

TEST_CASE("lr schedule peaks exactly at the warmup step") {
    for (int64_t w : {10, 100, 4000}) {
        double peak = lr_schedule(w, w, 64);
        CHECK(lr_schedule(w - 1, w, 64) < peak);
        CHECK(lr_schedule(w + 1, w, 64) < peak);
        for (int64_t n : {1L, 3L, 2 * w, 10 * w}) CHECK(lr_schedule(n, w, 64) <= peak);
    }
}

TEST_CASE("nll_loss matches the uniform and sharp references") {
    ad::Tensor uniform = ad::Tensor::from({1, 8}, std::vector<ad::Real>(8, 1.0));
    CHECK(nll_loss(uniform, {2}, {1}, 0).item() == doctest::Approx(std::log(8.0)));
}

TEST_CASE("kd_loss identities") {
    Rng rng(41);
    // Student equal to teacher: loss is exactly the teacher entropy.
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<ad::Real> logits(12);
        for (auto& v : logits) v = static_cast<ad::Real>(rng.next_uniform(-3, 3));
        ad::Tensor t = ad::Tensor::from({2, 6}, logits);
        ad::Tensor s = ad::Tensor::from({2, 6}, logits);
        double loss = kd_loss(t, s, {1, 1}).item();

        double entropy = 0.0;
        for (int64_t r = 0; r < 2; ++r) {
            double mx = -1e30, sum = 0;
            for (int64_t c = 0; c < 6; ++c)
                mx = std::max(mx, static_cast<double>(logits[static_cast<size_t>(r * 6 + c)]));
            for (int64_t c = 0; c < 6; ++c)
                sum += std::exp(logits[static_cast<size_t>(r * 6 + c)] - mx);
            for (int64_t c = 0; c < 6; ++c) {
                double p = std::exp(logits[static_cast<size_t>(r * 6 + c)] - mx) / sum;
                entropy -= p * std::log(p);
            }
        }
        entropy /= 2.0;
        CHECK(loss == doctest::Approx(entropy).epsilon(1e-9));
    }
}

TEST_CASE("kd_loss is at least the teacher entropy (Gibbs)") {
    Rng rng(42);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<ad::Real> tl(8), sl(8);
        for (auto& v : tl) v = static_cast<ad::Real>(rng.next_uniform(-4, 4));
        for (auto& v : sl) v = static_cast<ad::Real>(rng.next_uniform(-4, 4));
        ad::Tensor t = ad::Tensor::from({1, 8}, tl);
        ad::Tensor s = ad::Tensor::from({1, 8}, sl);
        double kd = kd_loss(t, s, {1}).item();
        double self = kd_loss(t, ad::Tensor::from({1, 8}, tl), {1}).item();
        CHECK(kd - self >= -1e-9);
    }
}

TEST_CASE("kd_loss one-hot teacher against uniform student") {
    std::vector<ad::Real> tl = {100, 0, 0, 0};
    std::vector<ad::Real> sl = {0, 0, 0, 0};
    double loss = kd_loss(ad::Tensor::from({1, 4}, tl), ad::Tensor::from({1, 4}, sl), {1}).item();
    CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("kd weight decays linearly from one") {
    CHECK(kd_weight(0, 10) == doctest::Approx(1.0));
    CHECK(kd_weight(9, 10) == doctest::Approx(0.1));
    for (int64_t e = 0; e + 1 < 10; ++e)
        CHECK(kd_weight(e + 1, 10) - kd_weight(e, 10) == doctest::Approx(-0.1));
    CHECK_THROWS(kd_weight(10, 10));
    CHECK_THROWS(kd_weight(0, 0));
}

TEST_CASE("pretraining overfits a tiny corpus deterministically") {
    Corpus corpus = tiny_corpus(16, 3);
    Vocab vocab = build_vocab(corpus, 64);
    model::ModelConfig mcfg = tiny_model(vocab.size());
    TrainConfig tcfg = fast_train(7);
    tcfg.epochs = 30;
    tcfg.patience = 30;

    TrainReport r1, r2;
    model::BaseParams b1 = pretrain_base(corpus, corpus, vocab, mcfg, tcfg, &r1);
    model::BaseParams b2 = pretrain_base(corpus, corpus, vocab, mcfg, tcfg, &r2);
    CHECK(model::params_checksum(b1.params) == model::params_checksum(b2.params));
    CHECK(r1.valid_nll.back() < r1.initial_valid_nll);
    CHECK(*std::min_element(r1.valid_nll.begin(), r1.valid_nll.end()) <=
          r1.initial_valid_nll);

    TrainConfig other = tcfg;
    other.seed = 8;
    model::BaseParams b3 = pretrain_base(corpus, corpus, vocab, mcfg, other, nullptr);
    CHECK(model::params_checksum(b1.params) != model::params_checksum(b3.params));
}

TEST_CASE("adapter fine-tuning freezes the base") {
    Corpus corpus = tiny_corpus(16, 4);
    Vocab vocab = build_vocab(corpus, 64);
    model::ModelConfig mcfg = tiny_model(vocab.size());
    TrainConfig tcfg = fast_train(9);
    model::BaseParams base = pretrain_base(corpus, corpus, vocab, mcfg, tcfg, nullptr);

    uint64_t before = model::params_checksum(base.params);
    ViewSubset subset{"con", 0.5, {0, 1, 2, 3, 4, 5, 6, 7}};
    model::AdapterParams adapter =
        finetune_adapter(base, subset, corpus, corpus, vocab, tcfg, "con", nullptr);
    CHECK(model::params_checksum(base.params) == before);

    // The adapter learned something: its up-projections moved off zero.
    double norm = 0;
    for (const auto& [name, t] : adapter.params.items) {
        if (name.find(".up") == std::string::npos) continue;
        for (ad::Real v : t.values()) norm += std::abs(static_cast<double>(v));
    }
    CHECK(norm > 0);

    CHECK_THROWS(finetune_adapter(base, ViewSubset{"con", 0.5, {}}, corpus, corpus, vocab, tcfg,
                                  "con", nullptr));
}

TEST_CASE("fresh adapter's initial NLL equals the base NLL") {
    Corpus corpus = tiny_corpus(12, 5);
    Vocab vocab = build_vocab(corpus, 64);
    model::ModelConfig mcfg = tiny_model(vocab.size());
    TrainConfig tcfg = fast_train(10);
    tcfg.epochs = 1;
    model::BaseParams base = pretrain_base(corpus, corpus, vocab, mcfg, tcfg, nullptr);

    model::ModelView plain;
    plain.base = &base;
    double base_nll = evaluate_nll(plain, corpus, vocab, 8);

    model::AdapterParams fresh = model::init_adapter(mcfg, "con", 77);
    model::ModelView view;
    view.base = &base;
    view.adapters = {&fresh};
    view.fusion = model::Fusion::Single;
    CHECK(evaluate_nll(view, corpus, vocab, 8) == doctest::Approx(base_nll).epsilon(1e-12));
}

TEST_CASE("progressive fine-tuning freezes base and previous adapters") {
    Corpus corpus = tiny_corpus(16, 6);
    Vocab vocab = build_vocab(corpus, 64);
    model::ModelConfig mcfg = tiny_model(vocab.size());
    TrainConfig tcfg = fast_train(11);
    model::BaseParams base = pretrain_base(corpus, corpus, vocab, mcfg, tcfg, nullptr);

    ViewSubset s1{"con", 0.5, {0, 1, 2, 3}};
    ViewSubset s2{"ent", 0.5, {4, 5, 6, 7}};
    model::AdapterParams first =
        finetune_progressive(base, {}, s1, corpus, corpus, vocab, tcfg, "con", nullptr);

    uint64_t base_sum = model::params_checksum(base.params);
    uint64_t first_sum = model::params_checksum(first.params);
    TrainReport report;
    model::AdapterParams second =
        finetune_progressive(base, {&first}, s2, corpus, corpus, vocab, tcfg, "ent", &report);
    CHECK(model::params_checksum(base.params) == base_sum);
    CHECK(model::params_checksum(first.params) == first_sum);

    REQUIRE(report.lambda_kd.size() == static_cast<size_t>(tcfg.epochs));
    CHECK(report.lambda_kd.front() == doctest::Approx(1.0));
    for (size_t e = 0; e + 1 < report.lambda_kd.size(); ++e)
        CHECK(report.lambda_kd[e + 1] - report.lambda_kd[e] ==
              doctest::Approx(-1.0 / static_cast<double>(tcfg.epochs)));
    (void)second;
}

TEST_CASE("first PF step from identity init matches teacher quantities") {
    // With the new adapter at its identity initialization, student == teacher,
    // so L_kd equals the teacher entropy and the total loss decomposes.
    Corpus corpus = tiny_corpus(8, 12);
    Vocab vocab = build_vocab(corpus, 64);
    model::ModelConfig mcfg = tiny_model(vocab.size());
    TrainConfig tcfg = fast_train(13);
    tcfg.epochs = 1;
    model::BaseParams base = pretrain_base(corpus, corpus, vocab, mcfg, tcfg, nullptr);
    model::AdapterParams prev =
        finetune_adapter(base, ViewSubset{"con", 0.5, {0, 1, 2, 3}}, corpus, corpus, vocab, tcfg,
                         "con", nullptr);

    model::ModelView teacher;
    teacher.base = &base;
    teacher.adapters = {&prev};
    teacher.fusion = model::Fusion::Stack;

    model::AdapterParams fresh = model::init_adapter(mcfg, "ent", 55);
    model::ModelView student = teacher;
    student.adapters.push_back(&fresh);

    std::vector<const DialoguePair*> pairs;
    for (int64_t i = 0; i < 4; ++i) pairs.push_back(&corpus.pairs[static_cast<size_t>(i)]);
    model::Batch batch = model::make_batch(pairs, vocab, mcfg.max_len);
    model::ForwardOpts opts;

    ad::NoGradGuard no_grad;
    ad::Tensor t_logits = model::forward_batch(teacher, batch, opts);
    ad::Tensor s_logits = model::forward_batch(student, batch, opts);

    double kd = kd_loss(t_logits, s_logits, batch.tgt_weight).item();
    double teacher_entropy = kd_loss(t_logits, t_logits, batch.tgt_weight).item();
    CHECK(kd == doctest::Approx(teacher_entropy).epsilon(1e-9));

    double nll_teacher = nll_loss(t_logits, batch.tgt_out, batch.tgt_weight, 0).item();
    double nll_student = nll_loss(s_logits, batch.tgt_out, batch.tgt_weight, 0).item();
    CHECK(nll_student == doctest::Approx(nll_teacher).epsilon(1e-9));

    double lambda = kd_weight(0, 10);
    double total = nll_student + lambda * kd;
    CHECK(total == doctest::Approx(nll_teacher + lambda * teacher_entropy).epsilon(1e-9));
}

TEST_CASE("pf order resolution") {
    std::vector<ScoreMethod> methods = {ScoreMethod::Con, ScoreMethod::Ent, ScoreMethod::Spe};
    auto a = resolve_pf_order(methods, "random", 1);
    auto b = resolve_pf_order(methods, "random", 1);
    CHECK(a == b);
    CHECK(a.size() == 3);

    auto fixed = resolve_pf_order(methods, "spe,con,ent", 1);
    CHECK(fixed == std::vector<ScoreMethod>{ScoreMethod::Spe, ScoreMethod::Con, ScoreMethod::Ent});
    CHECK_THROWS(resolve_pf_order(methods, "spe,con", 1));
    CHECK_THROWS(resolve_pf_order(methods, "spe,con,con", 1));
}

TEST_CASE("training aborts on a non-finite loss") {
    Corpus corpus = tiny_corpus(8, 14);
    Vocab vocab = build_vocab(corpus, 64);
    model::ModelConfig mcfg = tiny_model(vocab.size());
    TrainConfig tcfg = fast_train(15);
    model::BaseParams base = model::init_base(mcfg, 1);
    base.params.get("embed.tok").values()[5] = std::numeric_limits<ad::Real>::quiet_NaN();
    ViewSubset subset{"con", 0.5, {0, 1, 2, 3}};
    CHECK_THROWS_WITH_AS(
        finetune_adapter(base, subset, corpus, corpus, vocab, tcfg, "con", nullptr),
        doctest::Contains("diverged"), std::runtime_error);
}
