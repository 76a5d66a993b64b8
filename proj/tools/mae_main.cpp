// Command-line front end. Stage subcommands run against a pipeline config
// (--config); the per-module subcommands also accept explicit file flags.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "mae/checkpoint.hpp"
#include "mae/pipeline.hpp"
#include "mae/synthetic.hpp"

namespace {

using namespace mae;

struct StageArgs {
    std::string config_path;
    int64_t seed = -1;
    std::string out_dir;
};

void add_stage_options(CLI::App* cmd, StageArgs& args, bool config_required) {
    auto* opt = cmd->add_option("--config", args.config_path, "pipeline config file");
    if (config_required) opt->required();
    cmd->add_option("--seed", args.seed, "override run.seed");
    cmd->add_option("--out", args.out_dir, "override run.out");
}

pipeline::PipelineConfig load_stage_config(const StageArgs& args) {
    auto cfg = pipeline::PipelineConfig::load(args.config_path);
    cfg.apply_overrides(args.seed, args.out_dir);
    return cfg;
}

void cmd_corpus_stats(const std::string& path) {
    Corpus corpus = load_corpus(path, Split::Train);
    std::unordered_map<std::string, int64_t> tokens;
    double q_len = 0, r_len = 0;
    for (const auto& p : corpus.pairs) {
        for (const auto& t : p.query) ++tokens[t];
        for (const auto& t : p.response) ++tokens[t];
        q_len += static_cast<double>(p.query.size());
        r_len += static_cast<double>(p.response.size());
    }
    auto n = static_cast<double>(corpus.size());
    std::printf("pairs\t%lld\n", static_cast<long long>(corpus.size()));
    std::printf("distinct_tokens\t%zu\n", tokens.size());
    std::printf("mean_query_len\t%.3f\n", q_len / n);
    std::printf("mean_response_len\t%.3f\n", r_len / n);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-view adapter-enhanced dialogue training toolkit"};
    app.require_subcommand(1);

    // ---- synth ----
    SyntheticSpec synth_spec;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth", "write the synthetic benchmark corpus");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--train", synth_spec.train_pairs, "training pairs");
    synth->add_option("--valid", synth_spec.valid_pairs, "validation pairs");
    synth->add_option("--test", synth_spec.test_pairs, "test pairs");
    synth->add_option("--seed", synth_spec.seed, "generator seed");

    // ---- corpus stats ----
    std::string stats_path;
    auto* corpus_cmd = app.add_subcommand("corpus", "corpus utilities");
    corpus_cmd->require_subcommand(1);
    auto* stats_cmd = corpus_cmd->add_subcommand("stats", "print corpus statistics");
    stats_cmd->add_option("path", stats_path, "corpus TSV")->required();

    // ---- score ----
    StageArgs score_stage;
    std::string score_method = "con", score_corpus_path, score_out;
    int64_t score_d_emb = 48;
    double score_alpha = -1, score_beta = -1;
    uint64_t score_seed = 1;
    auto* score = app.add_subcommand("score", "compute per-sample scores");
    add_stage_options(score, score_stage, false);
    score->add_option("--method", score_method, "con|ent|spe");
    score->add_option("--corpus", score_corpus_path, "training corpus TSV");
    score->add_option("--out-file", score_out, "output scores TSV");
    score->add_option("--d-emb", score_d_emb, "embedding dimension");
    score->add_option("--alpha", score_alpha, "consistency alpha override");
    score->add_option("--beta", score_beta, "consistency beta override");
    score->add_option("--emb-seed", score_seed, "embedding seed");

    // ---- select ----
    StageArgs select_stage;
    std::string select_scores, select_out, select_direction = "auto", select_method = "con";
    double select_ratio = 0.5;
    auto* select = app.add_subcommand("select", "rank scores into a subset");
    add_stage_options(select, select_stage, false);
    select->add_option("--scores", select_scores, "scores TSV");
    select->add_option("--ratio", select_ratio, "selection ratio in (0,1]");
    select->add_option("--direction", select_direction, "auto|higher|lower");
    select->add_option("--method", select_method, "method tag for auto direction");
    select->add_option("--out-file", select_out, "output subset file");

    // ---- pretrain ----
    StageArgs pretrain_stage;
    auto* pretrain = app.add_subcommand("pretrain", "pre-train the base model");
    add_stage_options(pretrain, pretrain_stage, true);

    // ---- finetune ----
    StageArgs finetune_stage;
    std::string ft_view = "con", ft_mode = "af", ft_base, ft_train, ft_valid, ft_subset, ft_out;
    std::vector<std::string> ft_prev;
    auto* finetune = app.add_subcommand("finetune", "fine-tune a view adapter");
    add_stage_options(finetune, finetune_stage, false);
    finetune->add_option("--view", ft_view, "con|ent|spe");
    finetune->add_option("--mode", ft_mode, "af|pf");
    finetune->add_option("--prev", ft_prev, "previously trained adapter checkpoints (pf)");
    finetune->add_option("--base", ft_base, "base checkpoint");
    finetune->add_option("--train", ft_train, "training corpus TSV");
    finetune->add_option("--valid", ft_valid, "validation corpus TSV");
    finetune->add_option("--subset", ft_subset, "subset id file");
    finetune->add_option("--out-file", ft_out, "output adapter checkpoint");

    // ---- generate ----
    StageArgs generate_stage;
    std::string gen_fusion = "af", gen_mask, gen_base, gen_train, gen_test, gen_out,
        gen_distance = "l1";
    std::vector<std::string> gen_adapters;
    int64_t gen_beam = 5, gen_max_len = 32, gen_max_vocab = 4000;
    auto* generate = app.add_subcommand("generate", "generate responses for a test set");
    add_stage_options(generate, generate_stage, false);
    generate->add_option("--fusion", gen_fusion, "none|single|af|stack");
    generate->add_option("--mask", gen_mask, "adapter mask selector, e.g. \"block=2\"");
    generate->add_option("--beam", gen_beam, "beam size");
    generate->add_option("--max-len", gen_max_len, "max generated tokens");
    generate->add_option("--base", gen_base, "base checkpoint");
    generate->add_option("--adapters", gen_adapters, "adapter checkpoints in order");
    generate->add_option("--distance", gen_distance, "l1|l2");
    generate->add_option("--train", gen_train, "training corpus TSV (vocabulary)");
    generate->add_option("--test", gen_test, "test corpus TSV");
    generate->add_option("--max-vocab", gen_max_vocab, "vocabulary cap");
    generate->add_option("--out-file", gen_out, "output generations TSV");

    // ---- evaluate ----
    StageArgs evaluate_stage;
    std::string eval_gen, eval_ref, eval_train, eval_emb;
    auto* evaluate = app.add_subcommand("evaluate", "compute automatic metrics");
    add_stage_options(evaluate, evaluate_stage, false);
    evaluate->add_option("--gen", eval_gen, "generated responses TSV");
    evaluate->add_option("--ref", eval_ref, "reference corpus TSV");
    evaluate->add_option("--train", eval_train, "training corpus TSV");
    evaluate->add_option("--emb", eval_emb, "embedding checkpoint");

    // ---- all ----
    StageArgs all_stage;
    auto* all = app.add_subcommand("all", "run the full pipeline");
    add_stage_options(all, all_stage, true);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            write_synthetic_corpus(synth_out, synth_spec);
            std::printf("wrote %s/{train,valid,test}.tsv\n", synth_out.c_str());
            return 0;
        }
        if (corpus_cmd->parsed()) {
            cmd_corpus_stats(stats_path);
            return 0;
        }
        if (score->parsed()) {
            if (!score_stage.config_path.empty()) {
                pipeline::run(load_stage_config(score_stage), pipeline::Stage::Score);
                return 0;
            }
            require(!score_corpus_path.empty() && !score_out.empty(),
                    "score needs either --config or --corpus/--out-file");
            Corpus train = load_corpus(score_corpus_path, Split::Train);
            CorpusStats stats = build_corpus_stats(train);
            ScoreMethod method = method_from_name(score_method);
            EmbeddingTable emb;
            ConsistencyWeights weights;
            if (method == ScoreMethod::Con) {
                emb = build_embeddings(train, score_d_emb, score_seed);
                weights = compute_consistency_weights(train, stats, emb);
                if (score_alpha > 0) weights.alpha = score_alpha;
                if (score_beta > 0) weights.beta = score_beta;
            }
            pipeline::write_scores_tsv(score_out,
                                       score_corpus(method, train, stats, &emb, &weights));
            return 0;
        }
        if (select->parsed()) {
            if (!select_stage.config_path.empty()) {
                pipeline::run(load_stage_config(select_stage), pipeline::Stage::Select);
                return 0;
            }
            require(!select_scores.empty() && !select_out.empty(),
                    "select needs either --config or --scores/--out-file");
            ScoreMethod method = method_from_name(select_method);
            RankDirection dir = default_direction(method);
            if (select_direction == "higher") dir = RankDirection::HigherBetter;
            else if (select_direction == "lower") dir = RankDirection::LowerBetter;
            else require(select_direction == "auto", "direction must be auto|higher|lower");
            auto scores = pipeline::read_scores_tsv(select_scores, method);
            pipeline::write_subset(select_out, rank_and_select(scores, select_ratio, dir));
            return 0;
        }
        if (pretrain->parsed()) {
            pipeline::run(load_stage_config(pretrain_stage), pipeline::Stage::Pretrain);
            return 0;
        }
        if (finetune->parsed()) {
            if (!finetune_stage.config_path.empty()) {
                pipeline::run(load_stage_config(finetune_stage), pipeline::Stage::Finetune);
                return 0;
            }
            require(!ft_base.empty() && !ft_train.empty() && !ft_valid.empty() &&
                        !ft_subset.empty() && !ft_out.empty(),
                    "finetune needs either --config or --base/--train/--valid/--subset/--out-file");
            Corpus train = load_corpus(ft_train, Split::Train);
            Corpus valid = load_corpus(ft_valid, Split::Valid);
            model::BaseParams base = load_base(ft_base);
            base.params.set_trainable(false);
            Vocab vocab = build_vocab(train, base.cfg.vocab_size);
            ViewSubset subset = pipeline::read_subset(ft_subset, ft_view, 0.5);
            train::TrainConfig tcfg;
            tcfg.label_smoothing = base.cfg.label_smoothing;
            model::AdapterParams adapter;
            if (ft_mode == "af" || ft_prev.empty()) {
                adapter = train::finetune_adapter(base, subset, train, valid, vocab, tcfg,
                                                  ft_view, nullptr);
            } else {
                std::vector<model::AdapterParams> prev;
                for (const auto& path : ft_prev) prev.push_back(load_adapter(path, base.cfg));
                std::vector<const model::AdapterParams*> prev_ptr;
                for (const auto& a : prev) prev_ptr.push_back(&a);
                adapter = train::finetune_progressive(base, prev_ptr, subset, train, valid,
                                                      vocab, tcfg, ft_view, nullptr);
            }
            save_adapter(ft_out, adapter, base.cfg);
            return 0;
        }
        if (generate->parsed()) {
            if (!generate_stage.config_path.empty()) {
                pipeline::run(load_stage_config(generate_stage), pipeline::Stage::Generate);
                return 0;
            }
            require(!gen_base.empty() && !gen_train.empty() && !gen_test.empty() &&
                        !gen_out.empty(),
                    "generate needs either --config or --base/--train/--test/--out-file");
            Corpus train = load_corpus(gen_train, Split::Train);
            Corpus test = load_corpus(gen_test, Split::Test);
            model::BaseParams base = load_base(gen_base);
            base.params.set_trainable(false);
            Vocab vocab = build_vocab(train, gen_max_vocab);
            require(vocab.size() == base.cfg.vocab_size,
                    "vocabulary rebuilt from --train does not match the checkpoint");
            std::vector<model::AdapterParams> adapters;
            for (const auto& path : gen_adapters)
                adapters.push_back(load_adapter(path, base.cfg));
            model::ModelView view;
            view.base = &base;
            for (const auto& a : adapters) view.adapters.push_back(&a);
            view.fusion = model::fusion_from_name(gen_fusion);
            view.distance = model::distance_from_name(gen_distance);
            if (!gen_mask.empty()) view = infer::mask_adapters(view, gen_mask);
            infer::GenConfig gcfg;
            gcfg.beam_size = gen_beam;
            gcfg.max_len = gen_max_len;
            infer::write_generations(gen_out, infer::generate_set(view, test, vocab, gcfg));
            return 0;
        }
        if (evaluate->parsed()) {
            if (!evaluate_stage.config_path.empty()) {
                pipeline::run(load_stage_config(evaluate_stage), pipeline::Stage::Evaluate);
                return 0;
            }
            require(!eval_gen.empty() && !eval_ref.empty() && !eval_train.empty() &&
                        !eval_emb.empty(),
                    "evaluate needs either --config or --gen/--ref/--train/--emb");
            Corpus train = load_corpus(eval_train, Split::Train);
            Corpus ref = load_corpus(eval_ref, Split::Test);
            CorpusStats stats = build_corpus_stats(train);
            EmbeddingTable emb = load_embeddings(eval_emb);
            auto generated = infer::read_generations(eval_gen);
            require(generated.size() == ref.pairs.size(),
                    "generated and reference sets have different sizes");
            std::vector<std::pair<std::string, std::string>> reference;
            for (const auto& p : ref.pairs) reference.emplace_back(p.raw_query, p.raw_response);
            auto table = metrics::evaluate_all(generated, reference, stats, emb);
            for (const auto& [metric, value] : table.rows)
                std::printf("%-12s %10.6f\n", metric.c_str(), value);
            return 0;
        }
        if (all->parsed()) {
            pipeline::run(load_stage_config(all_stage), pipeline::Stage::All);
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
