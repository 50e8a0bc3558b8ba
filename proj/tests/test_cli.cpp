#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mga/csv.hpp"
#include "mga/errors.hpp"
#include "mga/pipeline.hpp"

using namespace mga;
using namespace mga::pipeline;
namespace fs = std::filesystem;

namespace {

// small config that runs the whole pipeline in seconds
nlohmann::json tiny_config(std::uint64_t seed) {
    return nlohmann::json{
        {"version", 1},
        {"seed", seed},
        {"cohort", {{"preset", "mimic-like"}, {"n_patients", 220}, {"events_min", 1},
                    {"events_max", 4}}},
        {"pretrain", {{"latent_dim", 12}, {"hidden_dim", 16}, {"batch_size", 64},
                      {"epochs", 3}, {"patience", 3}}},
        {"finetune", {{"task", "mortality"}, {"init", "contrastive"}, {"d_model", 8},
                      {"layers", 1}, {"heads", 2}, {"ffn_mult", 2}, {"dropout", 0.0},
                      {"epochs", 2}, {"patience", 2}, {"batch_size", 16}}},
        {"interpret", {{"ablate", "timeseries"}, {"sink", "demographics"}, {"max_stays", 2}}},
    };
}

struct RunDirs {
    fs::path root;
    fs::path synth, split, pre, lat, fine, task, interp;
    explicit RunDirs(const std::string& tag) {
        root = fs::temp_directory_path() / ("mga_cli_" + tag);
        fs::remove_all(root);
        synth = root / "synth";
        split = root / "split";
        pre = root / "pretrain";
        lat = root / "latent";
        fine = root / "finetune";
        task = root / "task";
        interp = root / "interp";
    }
    ~RunDirs() { fs::remove_all(root); }
};

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void run_all(const RunDirs& dirs, const ExperimentConfig& cfg) {
    prepare_run_dir(dirs.synth, cfg);
    REQUIRE(run_synth(cfg, dirs.synth) == 0);

    Paths p;
    p.records = (dirs.synth / "records.jsonl").string();
    p.labels = (dirs.synth / "labels.csv").string();
    prepare_run_dir(dirs.split, cfg);
    REQUIRE(run_split(cfg, p, dirs.split) == 0);

    p.split = (dirs.split / "split.csv").string();
    prepare_run_dir(dirs.pre, cfg);
    REQUIRE(run_pretrain(cfg, p, dirs.pre) == 0);

    p.checkpoint = (dirs.pre / "checkpoints" / "pretrain.ckpt").string();
    prepare_run_dir(dirs.lat, cfg);
    REQUIRE(run_latent_eval(cfg, p, dirs.lat) == 0);

    prepare_run_dir(dirs.fine, cfg);
    REQUIRE(run_finetune(cfg, p, dirs.fine) == 0);

    Paths pt = p;
    pt.checkpoint = (dirs.fine / "checkpoints" / "decoder.ckpt").string();
    prepare_run_dir(dirs.task, cfg);
    REQUIRE(run_task_eval(cfg, pt, dirs.task) == 0);

    prepare_run_dir(dirs.interp, cfg);
    REQUIRE(run_interpret(cfg, pt, dirs.interp) == 0);
}

}  // namespace

TEST_CASE("config parsing applies overrides and rejects unknown keys") {
    auto raw = tiny_config(5);
    apply_override(raw, "pretrain.lr=0.0005");
    apply_override(raw, "finetune.task=los");
    auto cfg = parse_config(raw);
    CHECK(cfg.pretrain.lr == doctest::Approx(0.0005));
    CHECK(cfg.task == "los");

    auto bad = tiny_config(5);
    bad["pretrain"]["learning_rate"] = 0.1;  // typo
    CHECK_THROWS_AS(parse_config(bad), ConfigError);

    auto bad2 = tiny_config(5);
    bad2["finetune"]["init"] = "warm";
    CHECK_THROWS_AS(parse_config(bad2), ConfigError);
}

TEST_CASE("defaults follow the documented recipe") {
    auto cfg = parse_config(nlohmann::json{{"version", 1}, {"seed", 3}});
    CHECK(cfg.pretrain.latent_dim == 256);
    CHECK(cfg.pretrain.hidden_dim == 512);
    CHECK(cfg.pretrain.batch_size == 128);
    CHECK(cfg.pretrain.modality_dropout == doctest::Approx(0.15));
    CHECK(cfg.pretrain.patience == 10);
    CHECK(cfg.finetune.modality_dropout == doctest::Approx(0.20));
    CHECK(cfg.finetune.decoder.d_model == 128);
    CHECK(cfg.finetune.decoder.layers == 4);
    CHECK(cfg.finetune.decoder.heads == 4);
    CHECK(cfg.retrieval_ks == std::vector<int>{1, 5, 10});
}

TEST_CASE("pipeline stages produce parsable artifacts and a self-describing run dir") {
    RunDirs dirs("artifacts");
    auto cfg = parse_config(tiny_config(11));
    run_all(dirs, cfg);

    // pretrain -> latent-eval contract: CSVs exist and parse
    auto retrieval = read_csv((dirs.lat / "metrics" / "retrieval.csv").string());
    REQUIRE(retrieval.size() > 1);
    CHECK(retrieval[0][0] == "metric");
    auto sil = read_csv((dirs.lat / "metrics" / "silhouette.csv").string());
    REQUIRE(sil.size() >= 2);
    CHECK(sil[1][1] == "overall");

    auto metrics = read_csv((dirs.task / "metrics" / "task_metrics.csv").string());
    REQUIRE(metrics.size() == 5);  // header + auroc/auprc/ace/bss
    CHECK(metrics[0] ==
          std::vector<std::string>{"architecture", "initialization", "task", "metric", "value"});

    auto summary = read_csv((dirs.interp / "metrics" / "ablation_summary.csv").string());
    CHECK(summary.size() >= 2);

    // run dirs are self-describing
    for (const auto& d : {dirs.synth, dirs.pre, dirs.task}) {
        CHECK(fs::exists(d / "config.resolved"));
        CHECK(fs::exists(d / "logs"));
    }

    // no stage mutated the synth artifacts
    auto records_before = read_file(dirs.synth / "records.jsonl");
    CHECK(!records_before.empty());
}

TEST_CASE("fixed seed reproduces byte-identical metric CSVs") {
    RunDirs a("det_a"), b("det_b");
    auto cfg = parse_config(tiny_config(23));
    run_all(a, cfg);
    run_all(b, cfg);
    for (const auto& rel :
         {fs::path("latent") / "metrics" / "retrieval.csv",
          fs::path("latent") / "metrics" / "silhouette.csv",
          fs::path("task") / "metrics" / "task_metrics.csv",
          fs::path("task") / "metrics" / "trajectories_test.csv",
          fs::path("interp") / "metrics" / "ablation_summary.csv"}) {
        fs::path pa = a.root, pb = b.root;
        // adjust: run dirs use short names
        std::string s = rel.string();
        CHECK(read_file(a.root / rel) == read_file(b.root / rel));
        (void)pa;
        (void)pb;
        (void)s;
    }
}

TEST_CASE("scratch init trains without a pretrain checkpoint") {
    RunDirs dirs("scratch");
    auto raw = tiny_config(31);
    raw["finetune"]["init"] = "scratch";
    raw["finetune"]["epochs"] = 1;
    auto cfg = parse_config(raw);

    prepare_run_dir(dirs.synth, cfg);
    REQUIRE(run_synth(cfg, dirs.synth) == 0);
    Paths p;
    p.records = (dirs.synth / "records.jsonl").string();
    p.labels = (dirs.synth / "labels.csv").string();
    prepare_run_dir(dirs.split, cfg);
    REQUIRE(run_split(cfg, p, dirs.split) == 0);
    p.split = (dirs.split / "split.csv").string();
    prepare_run_dir(dirs.fine, cfg);
    REQUIRE(run_finetune(cfg, p, dirs.fine) == 0);
    CHECK(fs::exists(dirs.fine / "checkpoints" / "decoder.ckpt"));

    // bundle reloads and carries the scratch tag
    auto bundle = load_decoder_bundle(dirs.fine / "checkpoints" / "decoder.ckpt");
    CHECK(bundle.init == "scratch");
}

TEST_CASE("missing upstream artifact is a data error") {
    auto cfg = parse_config(tiny_config(3));
    Paths p;
    p.records = "/nonexistent/records.jsonl";
    p.split = "/nonexistent/split.csv";
    fs::path out = fs::temp_directory_path() / "mga_cli_missing";
    fs::remove_all(out);
    prepare_run_dir(out, cfg);
    CHECK_THROWS_AS(run_pretrain(cfg, p, out), DataError);
    fs::remove_all(out);
}
