#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mga/contrastive.hpp"
#include "mga/decoder.hpp"
#include "mga/interp.hpp"
#include "mga/latent_eval.hpp"

namespace mga::pipeline {

// One declarative config file per experiment; sections mirror module configs.
// Unknown keys are rejected so typos fail loudly.
struct ExperimentConfig {
    int version = 1;
    std::uint64_t seed = 1;

    cohort::GeneratorConfig cohort;  // preset plus overrides
    std::string preset = "mimic-like";

    contrastive::PretrainConfig pretrain;

    decoder::FinetuneConfig finetune;
    std::string finetune_init = "contrastive";  // or "scratch"
    std::string task = "mortality";

    std::vector<int> retrieval_ks = {1, 5, 10};
    bool include_missing_tokens = false;

    std::string interpret_ablate;  // modality names
    std::string interpret_sink;
    int interpret_max_stays = 8;

    std::vector<double> sweep_rates = {0.0, 0.25, 0.5, 0.75};
    std::vector<std::string> sweep_modalities;
    int sweep_epochs = 10;
};

ExperimentConfig parse_config(const nlohmann::json& j);
nlohmann::json resolved_json(const ExperimentConfig& cfg);

// "--set a.b.c=value" overrides applied to the raw JSON before parsing
void apply_override(nlohmann::json& j, const std::string& assignment);

// Creates the fixed run layout (checkpoints/, metrics/, traces/, logs/) and
// writes config.resolved.
void prepare_run_dir(const std::filesystem::path& dir, const ExperimentConfig& cfg);

struct Paths {
    std::string records;
    std::string labels;
    std::string split;
    std::string checkpoint;  // pretrain or decoder checkpoint, per command
};

int run_synth(const ExperimentConfig& cfg, const std::filesystem::path& out);
int run_split(const ExperimentConfig& cfg, const Paths& in, const std::filesystem::path& out);
int run_pretrain(const ExperimentConfig& cfg, const Paths& in, const std::filesystem::path& out);
int run_latent_eval(const ExperimentConfig& cfg, const Paths& in,
                    const std::filesystem::path& out);
int run_finetune(const ExperimentConfig& cfg, const Paths& in, const std::filesystem::path& out);
int run_task_eval(const ExperimentConfig& cfg, const Paths& in, const std::filesystem::path& out);
int run_interpret(const ExperimentConfig& cfg, const Paths& in, const std::filesystem::path& out);
int run_sweep(const ExperimentConfig& cfg, const Paths& in, const std::filesystem::path& out);

// checkpoint helpers shared with tests
void save_pretrained(const std::filesystem::path& ckpt, const encoder::EncoderBank& bank,
                     const nn::ParamStore& loss_params);
std::unique_ptr<encoder::EncoderBank> load_pretrained(const std::filesystem::path& ckpt,
                                                      nn::ParamStore* loss_params = nullptr);
void save_decoder_bundle(const std::filesystem::path& ckpt, const decoder::SeqDecoder& dec,
                         const encoder::EncoderBank& bank, const std::string& init);
struct DecoderBundle {
    std::unique_ptr<decoder::SeqDecoder> decoder;
    std::unique_ptr<encoder::EncoderBank> bank;
    std::string init;
};
DecoderBundle load_decoder_bundle(const std::filesystem::path& ckpt);

}  // namespace mga::pipeline
