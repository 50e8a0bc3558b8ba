// Command-line surface for the missingness-aware multimodal pipeline:
// cohort synthesis, stratified splitting, contrastive pretraining, latent
// geometry evaluation, sequence-model fine-tuning, task evaluation,
// attention interpretation, and the dropout-ablation sweep.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mga/errors.hpp"
#include "mga/pipeline.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
    CLI::App app{"mga: missingness-aware multimodal sequence modeling"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::vector<std::string> overrides;
    mga::pipeline::Paths paths;

    auto add_common = [&](CLI::App* cmd, bool needs_records = false, bool needs_labels = false,
                          bool needs_split = false, bool needs_ckpt = false) {
        cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
        cmd->add_option("--out", out_dir, "run directory")->required();
        cmd->add_option("--set", overrides, "override config values, key.path=value")
            ->take_all();
        if (needs_records)
            cmd->add_option("--records", paths.records, "records JSONL")->required();
        if (needs_labels) cmd->add_option("--labels", paths.labels, "labels CSV")->required();
        if (needs_split) cmd->add_option("--split", paths.split, "split CSV")->required();
        if (needs_ckpt) cmd->add_option("--checkpoint", paths.checkpoint, "checkpoint file");
    };

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic cohort");
    add_common(synth);
    CLI::App* split_cmd = app.add_subcommand("split", "stratified train/val/test split");
    add_common(split_cmd, true);
    CLI::App* pretrain = app.add_subcommand("pretrain", "masked global alignment pretraining");
    add_common(pretrain, true, false, true);
    CLI::App* latent = app.add_subcommand("latent-eval", "retrieval and silhouette diagnostics");
    add_common(latent, true, false, true, true);
    CLI::App* finetune = app.add_subcommand("finetune", "train the sequence decoder");
    add_common(finetune, true, true, true, true);
    CLI::App* task = app.add_subcommand("task-eval", "test-set task metrics");
    add_common(task, true, true, true, true);
    CLI::App* interpret = app.add_subcommand("interpret", "attention traces and ablations");
    add_common(interpret, true, true, true, true);
    CLI::App* sweep = app.add_subcommand("sweep", "modality-dropout ablation grid");
    add_common(sweep, true);

    CLI11_PARSE(app, argc, argv);

    try {
        std::ifstream in(config_path);
        if (!in) throw mga::DataError("cannot open config: " + config_path);
        nlohmann::json raw = nlohmann::json::parse(in, nullptr, true);
        for (const auto& assignment : overrides)
            mga::pipeline::apply_override(raw, assignment);
        mga::pipeline::ExperimentConfig cfg = mga::pipeline::parse_config(raw);

        fs::path out(out_dir);
        mga::pipeline::prepare_run_dir(out, cfg);
        if (*synth) return mga::pipeline::run_synth(cfg, out);
        if (*split_cmd) return mga::pipeline::run_split(cfg, paths, out);
        if (*pretrain) return mga::pipeline::run_pretrain(cfg, paths, out);
        if (*latent) return mga::pipeline::run_latent_eval(cfg, paths, out);
        if (*finetune) return mga::pipeline::run_finetune(cfg, paths, out);
        if (*task) return mga::pipeline::run_task_eval(cfg, paths, out);
        if (*interpret) return mga::pipeline::run_interpret(cfg, paths, out);
        if (*sweep) return mga::pipeline::run_sweep(cfg, paths, out);
        return 2;
    } catch (const mga::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const mga::ShapeError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const mga::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const mga::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
