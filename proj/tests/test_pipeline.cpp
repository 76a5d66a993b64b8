#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mae/checkpoint.hpp"
#include "mae/pipeline.hpp"
#include "mae/synthetic.hpp"

using namespace mae;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// A corpus and configuration small enough to run the whole pipeline in a
// few seconds.
pipeline::PipelineConfig small_config(const std::string& dir, uint64_t seed) {
    SyntheticSpec spec;
    spec.train_pairs = 240;
    spec.valid_pairs = 40;
    spec.test_pairs = 30;
    spec.seed = 99;
    write_synthetic_corpus(dir + "/data", spec);

    std::string cfg_text =
        "[corpus]\n"
        "train = " + dir + "/data/train.tsv\n"
        "valid = " + dir + "/data/valid.tsv\n"
        "test = " + dir + "/data/test.tsv\n"
        "max_vocab = 1000\n"
        "[scoring]\n"
        "d_emb = 24\n"
        "[model]\n"
        "d_model = 16\n"
        "n_enc_layers = 1\n"
        "n_dec_layers = 1\n"
        "n_heads = 2\n"
        "d_ff = 32\n"
        "adapter_down = 4\n"
        "max_len = 16\n"
        "[train]\n"
        "epochs = 2\n"
        "batch_size = 32\n"
        "warmup_steps = 50\n"
        "[generate]\n"
        "beam = 3\n"
        "max_len = 12\n"
        "[run]\n"
        "seed = " + std::to_string(seed) + "\n"
        "out = " + dir + "/out\n";
    std::string cfg_path = dir + "/cfg.ini";
    std::ofstream out(cfg_path, std::ios::binary);
    out << cfg_text;
    out.close();
    return pipeline::PipelineConfig::load(cfg_path);
}

}  // namespace

TEST_CASE("synthetic corpus generation is deterministic") {
    SyntheticSpec spec;
    spec.train_pairs = 50;
    spec.valid_pairs = 10;
    spec.test_pairs = 10;
    write_synthetic_corpus("/tmp/mae_test_synth_a", spec);
    write_synthetic_corpus("/tmp/mae_test_synth_b", spec);
    CHECK(slurp("/tmp/mae_test_synth_a/train.tsv") == slurp("/tmp/mae_test_synth_b/train.tsv"));
    CHECK(slurp("/tmp/mae_test_synth_a/test.tsv") == slurp("/tmp/mae_test_synth_b/test.tsv"));

    spec.seed = 123;
    write_synthetic_corpus("/tmp/mae_test_synth_c", spec);
    CHECK(slurp("/tmp/mae_test_synth_a/train.tsv") != slurp("/tmp/mae_test_synth_c/train.tsv"));
}

TEST_CASE("stages demand their prerequisites by name") {
    std::string dir = "/tmp/mae_test_pipe_prereq";
    fs::remove_all(dir);
    fs::create_directories(dir);
    pipeline::PipelineConfig cfg = small_config(dir, 1);

    CHECK_THROWS_WITH_AS(pipeline::run(cfg, pipeline::Stage::Select),
                         doctest::Contains("run 'score' first"), std::runtime_error);
    CHECK_THROWS_WITH_AS(pipeline::run(cfg, pipeline::Stage::Finetune),
                         doctest::Contains("run 'pretrain' first"), std::runtime_error);
    CHECK_THROWS_WITH_AS(pipeline::run(cfg, pipeline::Stage::Generate),
                         doctest::Contains("run 'pretrain' first"), std::runtime_error);
    CHECK_THROWS_WITH_AS(pipeline::run(cfg, pipeline::Stage::Evaluate),
                         doctest::Contains("run 'generate' first"), std::runtime_error);
}

TEST_CASE("run all produces the full artifact set and is resumable") {
    std::string dir = "/tmp/mae_test_pipe_all";
    fs::remove_all(dir);
    fs::create_directories(dir);
    pipeline::PipelineConfig cfg = small_config(dir, 2);

    pipeline::run(cfg, pipeline::Stage::All);

    std::string out = cfg.out_dir;
    for (const char* name :
         {"scores_con.tsv", "scores_ent.tsv", "scores_spe.tsv", "subset_con.txt",
          "subset_ent.txt", "subset_spe.txt", "emb.ckpt", "base.ckpt", "adapter_con.ckpt",
          "adapter_ent.ckpt", "adapter_spe.ckpt", "generations.tsv", "metrics.tsv",
          "metrics.txt", "manifest.tsv", "heatmap.tsv"})
        CHECK_MESSAGE(fs::exists(out + "/" + name), name);

    // One generation per test pair.
    auto gens = infer::read_generations(out + "/generations.tsv");
    CHECK(gens.size() == 30);

    // Re-running a single stage with the same config reproduces its
    // artifacts byte for byte.
    std::string before = slurp(out + "/generations.tsv");
    pipeline::run(cfg, pipeline::Stage::Generate);
    CHECK(slurp(out + "/generations.tsv") == before);

    // Subset files have round(ratio * N) lines.
    auto subset = pipeline::read_subset(out + "/subset_con.txt", "con", 0.5);
    CHECK(subset.ids.size() == 120);
}

TEST_CASE("two full runs with one seed are bit-identical; a new seed is not") {
    std::string dir = "/tmp/mae_test_pipe_det";
    fs::remove_all(dir);
    fs::create_directories(dir);

    pipeline::PipelineConfig cfg = small_config(dir, 3);
    std::string out_a = dir + "/out_a", out_b = dir + "/out_b", out_c = dir + "/out_c";

    cfg.apply_overrides(-1, out_a);
    pipeline::run(cfg, pipeline::Stage::All);
    cfg.apply_overrides(-1, out_b);
    pipeline::run(cfg, pipeline::Stage::All);
    cfg.apply_overrides(4, out_c);
    pipeline::run(cfg, pipeline::Stage::All);

    for (const char* name : {"base.ckpt", "adapter_con.ckpt", "adapter_ent.ckpt",
                             "adapter_spe.ckpt", "generations.tsv", "metrics.tsv"}) {
        CHECK_MESSAGE(slurp(out_a + "/" + name) == slurp(out_b + "/" + name), name);
    }
    CHECK(slurp(out_a + "/base.ckpt") != slurp(out_c + "/base.ckpt"));
}

TEST_CASE("progressive fusion records its training order") {
    std::string dir = "/tmp/mae_test_pipe_pf";
    fs::remove_all(dir);
    fs::create_directories(dir);
    pipeline::PipelineConfig cfg = small_config(dir, 5);
    cfg.fusion_mode = "pf";
    cfg.raw.set("fusion.mode", "pf");

    pipeline::run(cfg, pipeline::Stage::All);
    CHECK(fs::exists(cfg.out_dir + "/pf_order.txt"));

    // The recorded order matches the draw from the seed.
    auto expected = train::resolve_pf_order(cfg.methods, "random", cfg.seed);
    std::ifstream in(cfg.out_dir + "/pf_order.txt");
    std::vector<ScoreMethod> recorded;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) recorded.push_back(method_from_name(line));
    CHECK(recorded == expected);

    // Manifest mentions the order and the config hash.
    std::string manifest = slurp(cfg.out_dir + "/manifest.tsv");
    CHECK(manifest.find("pf_order") != std::string::npos);
    CHECK(manifest.find("config_hash") != std::string::npos);
}

TEST_CASE("scores files use six decimal places") {
    std::string dir = "/tmp/mae_test_pipe_fmt";
    fs::remove_all(dir);
    fs::create_directories(dir);
    pipeline::PipelineConfig cfg = small_config(dir, 6);
    pipeline::run(cfg, pipeline::Stage::Score);

    std::ifstream in(cfg.out_dir + "/scores_spe.tsv");
    std::string line;
    REQUIRE(std::getline(in, line));
    size_t tab = line.find('\t');
    REQUIRE(tab != std::string::npos);
    std::string value = line.substr(tab + 1);
    size_t dot = value.find('.');
    REQUIRE(dot != std::string::npos);
    CHECK(value.size() - dot - 1 == 6);
}
