#include "mga/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "mga/checkpoint.hpp"
#include "mga/csv.hpp"
#include "mga/errors.hpp"
#include "mga/task_eval.hpp"

namespace mga::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& section,
                const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key))
            throw ConfigError("config: unknown key '" + key + "' in section '" + section + "'");
    }
}

template <class T>
void read_into(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

cohort::GeneratorConfig preset_config(const std::string& preset, int n_patients,
                                      std::uint64_t seed) {
    if (preset == "mimic-like") return cohort::mimic_like_config(n_patients, seed);
    if (preset == "eicu-like") return cohort::eicu_like_config(n_patients, seed);
    if (preset == "sink") return cohort::sink_config(n_patients, seed);
    throw ConfigError("config: unknown cohort preset '" + preset + "'");
}

std::ofstream open_log(const fs::path& out, const std::string& name) {
    std::ofstream log(out / "logs" / (name + ".log"));
    if (!log) throw DataError("cannot open log file under " + (out / "logs").string());
    return log;
}

std::vector<cohort::ModalitySpec> modalities_from_meta(const json& meta) {
    std::vector<cohort::ModalitySpec> mods;
    for (const auto& m : meta.at("modalities")) {
        cohort::ModalitySpec spec;
        spec.name = m.at("name").get<std::string>();
        spec.feature_dim = m.at("dim").get<int>();
        spec.is_static = m.at("static").get<bool>();
        mods.push_back(spec);
    }
    return mods;
}

json modalities_to_meta(const std::vector<cohort::ModalitySpec>& mods) {
    json arr = json::array();
    for (const auto& m : mods)
        arr.push_back({{"name", m.name}, {"dim", m.feature_dim}, {"static", m.is_static}});
    return arr;
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
    check_keys(j, "<root>",
               {"version", "seed", "cohort", "pretrain", "finetune", "latent_eval", "interpret",
                "sweep"});
    ExperimentConfig cfg;
    read_into(j, "version", cfg.version);
    if (cfg.version != 1) throw ConfigError("config: unsupported version");
    read_into(j, "seed", cfg.seed);

    int n_patients = 1000;
    json jc = j.value("cohort", json::object());
    check_keys(jc, "cohort",
               {"preset", "n_patients", "events_min", "events_max", "orphan_fraction",
                "stays_per_patient_max", "latent_dim", "view_noise", "modalities"});
    read_into(jc, "preset", cfg.preset);
    read_into(jc, "n_patients", n_patients);
    cfg.cohort = preset_config(cfg.preset, n_patients, cfg.seed);
    read_into(jc, "events_min", cfg.cohort.events_min);
    read_into(jc, "events_max", cfg.cohort.events_max);
    read_into(jc, "orphan_fraction", cfg.cohort.orphan_fraction);
    read_into(jc, "stays_per_patient_max", cfg.cohort.stays_per_patient_max);
    read_into(jc, "latent_dim", cfg.cohort.latent_dim);
    read_into(jc, "view_noise", cfg.cohort.view_noise);
    if (jc.contains("modalities")) {
        cfg.cohort.modalities.clear();
        for (const auto& m : jc.at("modalities")) {
            check_keys(m, "cohort.modalities[]", {"name", "dim", "presence", "static"});
            cohort::ModalitySpec spec;
            spec.name = m.at("name").get<std::string>();
            read_into(m, "dim", spec.feature_dim);
            read_into(m, "presence", spec.presence_prob);
            spec.is_static = m.value("static", false);
            cfg.cohort.modalities.push_back(spec);
        }
    }

    json jp = j.value("pretrain", json::object());
    check_keys(jp, "pretrain",
               {"latent_dim", "hidden_dim", "batch_size", "lr", "weight_decay", "epochs",
                "patience", "modality_dropout", "mlp_dropout", "tau_init"});
    read_into(jp, "latent_dim", cfg.pretrain.latent_dim);
    read_into(jp, "hidden_dim", cfg.pretrain.hidden_dim);
    read_into(jp, "batch_size", cfg.pretrain.batch_size);
    read_into(jp, "lr", cfg.pretrain.lr);
    read_into(jp, "weight_decay", cfg.pretrain.weight_decay);
    read_into(jp, "epochs", cfg.pretrain.max_epochs);
    read_into(jp, "patience", cfg.pretrain.patience);
    read_into(jp, "modality_dropout", cfg.pretrain.modality_dropout);
    read_into(jp, "mlp_dropout", cfg.pretrain.mlp_dropout);
    read_into(jp, "tau_init", cfg.pretrain.tau_init);
    cfg.pretrain.seed = cfg.seed;

    json jf = j.value("finetune", json::object());
    check_keys(jf, "finetune",
               {"task", "init", "d_model", "layers", "heads", "ffn_mult", "dropout", "lr",
                "weight_decay", "batch_size", "epochs", "patience", "modality_dropout"});
    read_into(jf, "task", cfg.task);
    read_into(jf, "init", cfg.finetune_init);
    if (cfg.finetune_init != "contrastive" && cfg.finetune_init != "scratch")
        throw ConfigError("config: finetune.init must be 'contrastive' or 'scratch'");
    cfg.finetune.decoder.task = decoder::task_from_name(cfg.task);
    read_into(jf, "d_model", cfg.finetune.decoder.d_model);
    read_into(jf, "layers", cfg.finetune.decoder.layers);
    read_into(jf, "heads", cfg.finetune.decoder.heads);
    read_into(jf, "ffn_mult", cfg.finetune.decoder.ffn_mult);
    read_into(jf, "dropout", cfg.finetune.decoder.dropout);
    read_into(jf, "lr", cfg.finetune.lr);
    read_into(jf, "weight_decay", cfg.finetune.weight_decay);
    read_into(jf, "batch_size", cfg.finetune.batch_size);
    read_into(jf, "epochs", cfg.finetune.max_epochs);
    read_into(jf, "patience", cfg.finetune.patience);
    read_into(jf, "modality_dropout", cfg.finetune.modality_dropout);
    cfg.finetune.decoder.latent_dim = cfg.pretrain.latent_dim;
    cfg.finetune.decoder.init_seed = cfg.seed ^ 0xdec0deULL;
    cfg.finetune.seed = cfg.seed;

    json jl = j.value("latent_eval", json::object());
    check_keys(jl, "latent_eval", {"ks", "include_missing_tokens"});
    read_into(jl, "ks", cfg.retrieval_ks);
    read_into(jl, "include_missing_tokens", cfg.include_missing_tokens);

    json ji = j.value("interpret", json::object());
    check_keys(ji, "interpret", {"ablate", "sink", "max_stays"});
    read_into(ji, "ablate", cfg.interpret_ablate);
    read_into(ji, "sink", cfg.interpret_sink);
    read_into(ji, "max_stays", cfg.interpret_max_stays);

    json js = j.value("sweep", json::object());
    check_keys(js, "sweep", {"rates", "modalities", "epochs"});
    read_into(js, "rates", cfg.sweep_rates);
    read_into(js, "modalities", cfg.sweep_modalities);
    read_into(js, "epochs", cfg.sweep_epochs);
    return cfg;
}

json resolved_json(const ExperimentConfig& cfg) {
    json mods = json::array();
    for (const auto& m : cfg.cohort.modalities)
        mods.push_back({{"name", m.name},
                        {"dim", m.feature_dim},
                        {"presence", m.presence_prob},
                        {"static", m.is_static}});
    return json{
        {"version", cfg.version},
        {"seed", cfg.seed},
        {"cohort",
         {{"preset", cfg.preset},
          {"n_patients", cfg.cohort.n_patients},
          {"events_min", cfg.cohort.events_min},
          {"events_max", cfg.cohort.events_max},
          {"orphan_fraction", cfg.cohort.orphan_fraction},
          {"stays_per_patient_max", cfg.cohort.stays_per_patient_max},
          {"latent_dim", cfg.cohort.latent_dim},
          {"view_noise", cfg.cohort.view_noise},
          {"modalities", mods}}},
        {"pretrain",
         {{"latent_dim", cfg.pretrain.latent_dim},
          {"hidden_dim", cfg.pretrain.hidden_dim},
          {"batch_size", cfg.pretrain.batch_size},
          {"lr", cfg.pretrain.lr},
          {"weight_decay", cfg.pretrain.weight_decay},
          {"epochs", cfg.pretrain.max_epochs},
          {"patience", cfg.pretrain.patience},
          {"modality_dropout", cfg.pretrain.modality_dropout},
          {"mlp_dropout", cfg.pretrain.mlp_dropout},
          {"tau_init", cfg.pretrain.tau_init}}},
        {"finetune",
         {{"task", cfg.task},
          {"init", cfg.finetune_init},
          {"d_model", cfg.finetune.decoder.d_model},
          {"layers", cfg.finetune.decoder.layers},
          {"heads", cfg.finetune.decoder.heads},
          {"ffn_mult", cfg.finetune.decoder.ffn_mult},
          {"dropout", cfg.finetune.decoder.dropout},
          {"lr", cfg.finetune.lr},
          {"weight_decay", cfg.finetune.weight_decay},
          {"batch_size", cfg.finetune.batch_size},
          {"epochs", cfg.finetune.max_epochs},
          {"patience", cfg.finetune.patience},
          {"modality_dropout", cfg.finetune.modality_dropout}}},
        {"latent_eval",
         {{"ks", cfg.retrieval_ks}, {"include_missing_tokens", cfg.include_missing_tokens}}},
        {"interpret",
         {{"ablate", cfg.interpret_ablate},
          {"sink", cfg.interpret_sink},
          {"max_stays", cfg.interpret_max_stays}}},
        {"sweep",
         {{"rates", cfg.sweep_rates},
          {"modalities", cfg.sweep_modalities},
          {"epochs", cfg.sweep_epochs}}},
    };
}

void apply_override(json& j, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("--set expects key.path=value, got '" + assignment + "'");
    std::string path = assignment.substr(0, eq);
    std::string value = assignment.substr(eq + 1);
    std::string pointer = "/";
    for (char c : path) pointer += (c == '.') ? '/' : c;
    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const json::parse_error&) {
        parsed = value;  // plain string
    }
    j[json::json_pointer(pointer)] = parsed;
}

void prepare_run_dir(const fs::path& dir, const ExperimentConfig& cfg) {
    fs::create_directories(dir / "checkpoints");
    fs::create_directories(dir / "metrics");
    fs::create_directories(dir / "traces");
    fs::create_directories(dir / "logs");
    std::ofstream out(dir / "config.resolved");
    if (!out) throw DataError("cannot write config.resolved under " + dir.string());
    out << resolved_json(cfg).dump(2) << '\n';
}

void save_pretrained(const fs::path& ckpt, const encoder::EncoderBank& bank,
                     const nn::ParamStore& loss_params) {
    nn::save_checkpoint(ckpt.string(), {{"bank", &bank.params()}, {"loss", &loss_params}});
    const auto& cfg = bank.config();
    json meta{{"modalities", modalities_to_meta(cfg.modalities)},
              {"latent_dim", cfg.latent_dim},
              {"hidden_dim", cfg.hidden_dim},
              {"mlp_dropout", cfg.mlp_dropout}};
    std::ofstream out(ckpt.string() + ".meta.json");
    out << meta.dump(2) << '\n';
}

std::unique_ptr<encoder::EncoderBank> load_pretrained(const fs::path& ckpt,
                                                      nn::ParamStore* loss_params) {
    std::ifstream meta_in(ckpt.string() + ".meta.json");
    if (!meta_in) throw DataError("missing checkpoint metadata: " + ckpt.string() + ".meta.json");
    json meta = json::parse(meta_in);
    encoder::EncoderBankConfig cfg;
    cfg.modalities = modalities_from_meta(meta);
    cfg.latent_dim = meta.at("latent_dim").get<int>();
    cfg.hidden_dim = meta.at("hidden_dim").get<int>();
    cfg.mlp_dropout = meta.at("mlp_dropout").get<double>();
    auto bank = std::make_unique<encoder::EncoderBank>(cfg);
    nn::ParamStore discard;
    nn::ParamStore* loss = loss_params ? loss_params : &discard;
    loss->create("log_tau", {1});
    nn::load_checkpoint(ckpt.string(), {{"bank", &bank->params()}, {"loss", loss}});
    return bank;
}

void save_decoder_bundle(const fs::path& ckpt, const decoder::SeqDecoder& dec,
                         const encoder::EncoderBank& bank, const std::string& init) {
    nn::save_checkpoint(ckpt.string(), {{"decoder", &dec.params()}, {"bank", &bank.params()}});
    const auto& dc = dec.config();
    const auto& bc = bank.config();
    json meta{{"task", decoder::task_name(dc.task)},
              {"d_model", dc.d_model},
              {"layers", dc.layers},
              {"heads", dc.heads},
              {"ffn_mult", dc.ffn_mult},
              {"dropout", dc.dropout},
              {"latent_dim", dc.latent_dim},
              {"init", init},
              {"bank",
               {{"modalities", modalities_to_meta(bc.modalities)},
                {"latent_dim", bc.latent_dim},
                {"hidden_dim", bc.hidden_dim},
                {"mlp_dropout", bc.mlp_dropout}}}};
    std::ofstream out(ckpt.string() + ".meta.json");
    out << meta.dump(2) << '\n';
}

DecoderBundle load_decoder_bundle(const fs::path& ckpt) {
    std::ifstream meta_in(ckpt.string() + ".meta.json");
    if (!meta_in) throw DataError("missing checkpoint metadata: " + ckpt.string() + ".meta.json");
    json meta = json::parse(meta_in);
    DecoderBundle bundle;
    decoder::DecoderConfig dc;
    dc.task = decoder::task_from_name(meta.at("task").get<std::string>());
    dc.d_model = meta.at("d_model").get<int>();
    dc.layers = meta.at("layers").get<int>();
    dc.heads = meta.at("heads").get<int>();
    dc.ffn_mult = meta.at("ffn_mult").get<int>();
    dc.dropout = meta.at("dropout").get<double>();
    dc.latent_dim = meta.at("latent_dim").get<int>();
    bundle.decoder = std::make_unique<decoder::SeqDecoder>(dc);
    encoder::EncoderBankConfig bc;
    const json& bank_meta = meta.at("bank");
    bc.modalities = modalities_from_meta(bank_meta);
    bc.latent_dim = bank_meta.at("latent_dim").get<int>();
    bc.hidden_dim = bank_meta.at("hidden_dim").get<int>();
    bc.mlp_dropout = bank_meta.at("mlp_dropout").get<double>();
    bundle.bank = std::make_unique<encoder::EncoderBank>(bc);
    bundle.init = meta.at("init").get<std::string>();
    nn::load_checkpoint(ckpt.string(),
                        {{"decoder", &bundle.decoder->params()}, {"bank", &bundle.bank->params()}});
    return bundle;
}

int run_synth(const ExperimentConfig& cfg, const fs::path& out) {
    cohort::Cohort c = cohort::generate(cfg.cohort);
    cohort::write_records_jsonl((out / "records.jsonl").string(), c.records,
                                cfg.cohort.modalities);
    cohort::write_labels_csv((out / "labels.csv").string(), c.labels);
    auto log = open_log(out, "synth");
    log << "stays=" << c.labels.size() << " records=" << c.records.size()
        << " dropped_zero_modality_stays=" << c.dropped_stays << '\n';
    return 0;
}

int run_split(const ExperimentConfig& cfg, const Paths& in, const fs::path& out) {
    auto records = cohort::read_records_jsonl(in.records, cfg.cohort.modalities);
    auto split = split::stratify(records, cfg.seed);
    split::write_split_csv((out / "split.csv").string(), split);

    auto report = split::split_report(split, records,
                                      static_cast<int>(cfg.cohort.modalities.size()));
    CsvWriter w((out / "metrics" / "split_report.csv").string());
    std::vector<std::string> header = {"split", "stays", "patient_stays", "orphan_stays"};
    for (const auto& m : cfg.cohort.modalities) {
        header.push_back("present_" + m.name);
        header.push_back("missing_" + m.name);
    }
    w.row(header);
    for (const auto& row : report) {
        std::vector<std::string> cells = {row.split, std::to_string(row.stays),
                                          std::to_string(row.patient_stays),
                                          std::to_string(row.orphan_stays)};
        for (std::size_t m = 0; m < cfg.cohort.modalities.size(); ++m) {
            cells.push_back(std::to_string(row.present[m]));
            cells.push_back(std::to_string(row.missing[m]));
        }
        w.row(cells);
    }
    auto log = open_log(out, "split");
    for (const auto& warning : split.warnings) log << "warning: " << warning << '\n';
    return 0;
}

int run_pretrain(const ExperimentConfig& cfg, const Paths& in, const fs::path& out) {
    auto records = cohort::read_records_jsonl(in.records, cfg.cohort.modalities);
    auto split = split::read_split_csv(in.split);
    auto result = contrastive::pretrain(records, cfg.cohort.modalities, split, cfg.pretrain);
    save_pretrained(out / "checkpoints" / "pretrain.ckpt", *result.bank, result.loss_params);
    contrastive::write_pretrain_log_csv((out / "logs" / "pretrain_log.csv").string(), result.log,
                                        cfg.cohort.modalities);
    auto log = open_log(out, "pretrain");
    log << "best_epoch=" << result.best_epoch << " best_val=" << fmt_double(result.best_val)
        << " tau=" << fmt_double(contrastive::tau_value(result.loss_params)) << '\n';
    return 0;
}

namespace {

// eval-mode embeddings of one fold, with MISSING_TOKEN entries for absences
std::vector<encoder::LatentEmbedding> fold_embeddings(encoder::EncoderBank& bank,
                                                      const encoder::PretrainTable& table) {
    nn::Tape tape(false);
    auto z = bank.encode_all(tape, table.features, table.mask, false, nullptr);
    std::vector<encoder::LatentEmbedding> out;
    int m = table.mask.n_modalities;
    int n = table.mask.n_patients;
    int d = static_cast<int>(bank.config().latent_dim);
    for (int i = 0; i < m; ++i) {
        for (int k = 0; k < n; ++k) {
            encoder::LatentEmbedding e;
            e.stay_id = table.stay_ids[static_cast<std::size_t>(k)];
            e.modality = i;
            e.source = table.mask.at(i, k) ? encoder::Source::Encoded
                                           : encoder::Source::MissingToken;
            e.vector.assign(
                z[static_cast<std::size_t>(i)].data() + static_cast<std::size_t>(k) * d,
                z[static_cast<std::size_t>(i)].data() + static_cast<std::size_t>(k + 1) * d);
            out.push_back(std::move(e));
        }
    }
    return out;
}

}  // namespace

int run_latent_eval(const ExperimentConfig& cfg, const Paths& in, const fs::path& out) {
    auto records = cohort::read_records_jsonl(in.records, cfg.cohort.modalities);
    auto split = split::read_split_csv(in.split);
    auto bank = load_pretrained(in.checkpoint);
    auto table = encoder::build_pretrain_table(records, cfg.cohort.modalities,
                                               split::stays_in_fold(split, split::Fold::Test));
    auto embeddings = fold_embeddings(*bank, table);

    auto rows = latent_eval::retrieval_report(embeddings,
                                              static_cast<int>(cfg.cohort.modalities.size()),
                                              cfg.retrieval_ks, cfg.include_missing_tokens);
    latent_eval::write_retrieval_csv((out / "metrics" / "retrieval.csv").string(), rows,
                                     cfg.cohort.modalities);
    auto sil = latent_eval::modality_silhouette(embeddings, cfg.include_missing_tokens);
    latent_eval::write_silhouette_csv((out / "metrics" / "silhouette.csv").string(), sil,
                                      cfg.cohort.modalities);
    latent_eval::write_embeddings_csv((out / "metrics" / "embeddings_test.csv").string(),
                                      embeddings, cfg.cohort.modalities);
    auto log = open_log(out, "latent_eval");
    log << "pairs=" << rows.size() << " silhouette_overall=" << fmt_double(sil.overall) << '\n';
    return 0;
}

int run_finetune(const ExperimentConfig& cfg, const Paths& in, const fs::path& out) {
    auto records = cohort::read_records_jsonl(in.records, cfg.cohort.modalities);
    auto labels = cohort::read_labels_csv(in.labels);
    auto split = split::read_split_csv(in.split);

    std::unique_ptr<encoder::EncoderBank> bank;
    if (cfg.finetune_init == "contrastive") {
        if (in.checkpoint.empty())
            throw ConfigError("finetune: contrastive init needs --checkpoint");
        bank = load_pretrained(in.checkpoint);
        bank->freeze();
    } else {
        encoder::EncoderBankConfig bc;
        bc.modalities = cfg.cohort.modalities;
        bc.latent_dim = cfg.pretrain.latent_dim;
        bc.hidden_dim = cfg.pretrain.hidden_dim;
        bc.mlp_dropout = cfg.pretrain.mlp_dropout;
        bc.init_seed = cfg.seed ^ 0x5c7a7cULL;
        bank = std::make_unique<encoder::EncoderBank>(bc);
    }

    auto train_tl = timeline::build_timelines(records, labels,
                                              split::stays_in_fold(split, split::Fold::Train));
    auto val_tl =
        timeline::build_timelines(records, labels, split::stays_in_fold(split, split::Fold::Val));
    auto result = decoder::finetune(*bank, train_tl, val_tl, cfg.finetune);
    if (result.halted_non_finite) {
        auto log = open_log(out, "finetune");
        log << "halted: non-finite loss; checkpoint holds last finite state\n";
    }
    save_decoder_bundle(out / "checkpoints" / "decoder.ckpt", *result.decoder, *bank,
                        cfg.finetune_init);
    decoder::write_finetune_log_csv((out / "logs" / "finetune_log.csv").string(), result.log);
    auto log = open_log(out, "finetune_summary");
    log << "best_epoch=" << result.best_epoch << " best_val=" << fmt_double(result.best_val)
        << " halted=" << (result.halted_non_finite ? 1 : 0) << '\n';
    return result.halted_non_finite ? 4 : 0;
}

int run_task_eval(const ExperimentConfig& cfg, const Paths& in, const fs::path& out) {
    auto records = cohort::read_records_jsonl(in.records, cfg.cohort.modalities);
    auto labels = cohort::read_labels_csv(in.labels);
    auto split = split::read_split_csv(in.split);
    auto bundle = load_decoder_bundle(in.checkpoint);

    auto test_stays = split::stays_in_fold(split, split::Fold::Test);
    auto test_tl = timeline::build_timelines(records, labels, test_stays);
    decoder::cache_embeddings(*bundle.bank, test_tl);

    std::vector<decoder::Trajectory> trajectories;
    std::vector<std::string> stay_ids;
    for (auto& tl : test_tl) {
        trajectories.push_back(decoder::predict(*bundle.decoder, tl, bundle.bank.get()));
        stay_ids.push_back(tl.stay_id);
    }
    decoder::Task task = bundle.decoder->config().task;
    decoder::write_trajectories_csv((out / "metrics" / "trajectories_test.csv").string(),
                                    stay_ids, trajectories, task);

    CsvWriter w((out / "metrics" / "task_metrics.csv").string());
    w.row({"architecture", "initialization", "task", "metric", "value"});
    auto emit = [&](const std::string& metric, double value) {
        w.row({"seq-decoder", bundle.init, decoder::task_name(task), metric, fmt_double(value)});
    };

    if (task == decoder::Task::Mortality) {
        std::vector<double> probs;
        std::vector<int> ys;
        for (std::size_t i = 0; i < test_tl.size(); ++i) {
            probs.push_back(trajectories[i].final_prediction()[0]);
            ys.push_back(test_tl[i].labels.mortality);
        }
        emit("auroc", task_eval::auroc(probs, ys));
        emit("auprc", task_eval::auprc(probs, ys));
        emit("ace", task_eval::ace(probs, ys));
        emit("bss", task_eval::bss(probs, ys));
    } else if (task == decoder::Task::Phenotyping) {
        std::vector<std::vector<double>> probs(cohort::kPhenotypeCount);
        std::vector<std::vector<int>> ys(cohort::kPhenotypeCount);
        for (std::size_t i = 0; i < test_tl.size(); ++i) {
            auto fin = trajectories[i].final_prediction();
            for (int c = 0; c < cohort::kPhenotypeCount; ++c) {
                probs[static_cast<std::size_t>(c)].push_back(fin[static_cast<std::size_t>(c)]);
                ys[static_cast<std::size_t>(c)].push_back(
                    test_tl[i].labels.phenotypes[static_cast<std::size_t>(c)]);
            }
        }
        int skipped = 0;
        emit("auroc_macro", task_eval::macro_auroc(probs, ys, &skipped));
        emit("auprc_macro", task_eval::macro_auprc(probs, ys));
        double ace_sum = 0.0, bss_sum = 0.0;
        int calib_used = 0;
        for (int c = 0; c < cohort::kPhenotypeCount; ++c) {
            bool pos = false, neg = false;
            for (int y : ys[static_cast<std::size_t>(c)]) (y ? pos : neg) = true;
            if (!pos || !neg) continue;
            ace_sum += task_eval::ace(probs[static_cast<std::size_t>(c)],
                                      ys[static_cast<std::size_t>(c)]);
            bss_sum += task_eval::bss(probs[static_cast<std::size_t>(c)],
                                      ys[static_cast<std::size_t>(c)]);
            ++calib_used;
        }
        if (calib_used > 0) {
            emit("ace_macro", ace_sum / calib_used);
            emit("bss_macro", bss_sum / calib_used);
        }
        auto log = open_log(out, "task_eval");
        log << "phenotype_classes_skipped=" << skipped << '\n';
    } else {
        std::vector<double> pred_hours, true_hours;
        for (std::size_t i = 0; i < test_tl.size(); ++i) {
            // predictions live on the log1p scale; back-transform to hours
            pred_hours.push_back(std::expm1(trajectories[i].final_prediction()[0]));
            true_hours.push_back(test_tl[i].labels.los_hours);
        }
        auto m = task_eval::regression_suite(pred_hours, true_hours);
        emit("mse", m.mse);
        emit("mae", m.mae);
        emit("pearson", m.pearson);
        emit("spearman", m.spearman);
    }

    // per-slot metric trajectories (supplementary)
    CsvWriter ws((out / "metrics" / "per_slot_metrics.csv").string());
    ws.row({"task", "metric", "slot_index", "n_stays", "value"});
    std::size_t max_slots = 0;
    for (const auto& t : trajectories) max_slots = std::max(max_slots, t.per_slot.size());
    for (std::size_t s = 0; s < max_slots; ++s) {
        std::vector<double> preds;
        std::vector<int> ys;
        std::vector<double> tru;
        for (std::size_t i = 0; i < trajectories.size(); ++i) {
            if (trajectories[i].per_slot.size() <= s) continue;
            preds.push_back(trajectories[i].per_slot[s][0]);
            ys.push_back(test_tl[i].labels.mortality);
            tru.push_back(test_tl[i].labels.los_hours);
        }
        if (preds.size() < 10) continue;
        if (task == decoder::Task::Mortality) {
            bool pos = false, neg = false;
            for (int y : ys) (y ? pos : neg) = true;
            if (!pos || !neg) continue;
            ws.row({"mortality", "auroc", std::to_string(s), std::to_string(preds.size()),
                    fmt_double(task_eval::auroc(preds, ys))});
        } else if (task == decoder::Task::Los) {
            std::vector<double> hrs;
            for (double p : preds) hrs.push_back(std::expm1(p));
            auto m = task_eval::regression_suite(hrs, tru);
            ws.row({"los", "mae", std::to_string(s), std::to_string(preds.size()),
                    fmt_double(m.mae)});
        }
    }
    return 0;
}

int run_interpret(const ExperimentConfig& cfg, const Paths& in, const fs::path& out) {
    auto records = cohort::read_records_jsonl(in.records, cfg.cohort.modalities);
    auto labels = cohort::read_labels_csv(in.labels);
    auto split = split::read_split_csv(in.split);
    auto bundle = load_decoder_bundle(in.checkpoint);

    if (cfg.interpret_ablate.empty())
        throw ConfigError("interpret: config must name the modality to ablate");
    int ablate = cohort::modality_index(cfg.cohort.modalities, cfg.interpret_ablate);
    int sink = cfg.interpret_sink.empty()
                   ? -1
                   : cohort::modality_index(cfg.cohort.modalities, cfg.interpret_sink);

    auto test_tl = timeline::build_timelines(records, labels,
                                             split::stays_in_fold(split, split::Fold::Test));
    decoder::cache_embeddings(*bundle.bank, test_tl);

    CsvWriter w((out / "metrics" / "ablation_summary.csv").string());
    std::vector<std::string> header = {"stay_id", "removed_modality", "divergence", "flip"};
    if (sink >= 0) header.push_back("sink_score_" + cfg.interpret_sink);
    for (const auto& m : cfg.cohort.modalities) header.push_back("shift_" + m.name);
    header.push_back("shift_PREDICT");
    w.row(header);

    int done = 0;
    for (const auto& tl : test_tl) {
        if (done >= cfg.interpret_max_stays) break;
        auto mods = timeline::present_modalities(tl);
        if (mods.size() < 2 || !std::count(mods.begin(), mods.end(), ablate)) continue;
        if (sink >= 0 && !std::count(mods.begin(), mods.end(), sink)) continue;
        auto report = interp::compare_ablation(*bundle.decoder, tl, ablate, bundle.bank.get());

        std::string base = tl.stay_id;
        interp::write_heatmap_csv((out / "traces" / (base + "_baseline_heatmap.csv")).string(),
                                  report.baseline);
        interp::write_heatmap_csv((out / "traces" / (base + "_ablated_heatmap.csv")).string(),
                                  report.ablated);
        interp::write_annotations_json((out / "traces" / (base + "_baseline.json")).string(),
                                       report.baseline, cfg.cohort.modalities);
        interp::write_annotations_json((out / "traces" / (base + "_ablated.json")).string(),
                                       report.ablated, cfg.cohort.modalities);
        interp::write_trajectory_pair_csv(
            (out / "traces" / (base + "_trajectory_pair.csv")).string(), report);

        std::vector<std::string> row = {tl.stay_id, cfg.interpret_ablate,
                                        fmt_double(report.trajectory_divergence),
                                        report.flip ? "1" : "0"};
        if (sink >= 0) row.push_back(fmt_double(interp::sink_score(report, sink)));
        for (std::size_t m = 0; m < cfg.cohort.modalities.size(); ++m) {
            auto it = report.attention_shift.find(static_cast<int>(m));
            row.push_back(fmt_double(it == report.attention_shift.end() ? 0.0 : it->second));
        }
        auto pit = report.attention_shift.find(interp::kPredictCategory);
        row.push_back(fmt_double(pit == report.attention_shift.end() ? 0.0 : pit->second));
        w.row(row);
        ++done;
    }
    if (done == 0) throw DataError("interpret: no eligible test stay for the requested ablation");
    auto log = open_log(out, "interpret");
    log << "stays=" << done << '\n';
    return 0;
}

int run_sweep(const ExperimentConfig& cfg, const Paths& in, const fs::path& out) {
    auto records = cohort::read_records_jsonl(in.records, cfg.cohort.modalities);
    std::vector<std::string> sweep_mods = cfg.sweep_modalities;
    if (sweep_mods.empty())
        for (const auto& m : cfg.cohort.modalities) sweep_mods.push_back(m.name);

    CsvWriter w((out / "metrics" / "sweep.csv").string());
    w.row({"modality", "rate", "silhouette_overall", "recall_at_1_macro"});

    for (const auto& mod_name : sweep_mods) {
        int mod = cohort::modality_index(cfg.cohort.modalities, mod_name);
        for (double rate : cfg.sweep_rates) {
            // artificially drop `rate` of this modality's present stays
            std::vector<cohort::ModalityRecord> cell_records;
            std::set<std::string> present_stays;
            for (const auto& r : records)
                if (!r.absent && r.modality == mod) present_stays.insert(r.stay_id);
            std::vector<std::string> ordered(present_stays.begin(), present_stays.end());
            Rng cell_rng(cfg.seed ^ (static_cast<std::uint64_t>(mod) << 20) ^
                         static_cast<std::uint64_t>(rate * 1e6));
            cell_rng.shuffle(ordered);
            std::set<std::string> dropped(
                ordered.begin(),
                ordered.begin() + static_cast<std::ptrdiff_t>(rate * ordered.size()));
            std::set<std::string> emitted_absent;
            for (const auto& r : records) {
                if (r.modality == mod && dropped.count(r.stay_id)) {
                    if (!emitted_absent.count(r.stay_id)) {
                        cohort::ModalityRecord absent;
                        absent.patient_id = r.patient_id;
                        absent.stay_id = r.stay_id;
                        absent.modality = mod;
                        absent.absent = true;
                        cell_records.push_back(absent);
                        emitted_absent.insert(r.stay_id);
                    }
                    continue;
                }
                cell_records.push_back(r);
            }
            // drop stays left with no present modality at all
            std::set<std::string> still_present;
            for (const auto& r : cell_records)
                if (!r.absent) still_present.insert(r.stay_id);
            std::vector<cohort::ModalityRecord> final_records;
            for (const auto& r : cell_records)
                if (still_present.count(r.stay_id)) final_records.push_back(r);

            auto cell_split = split::stratify(final_records, cfg.seed);
            contrastive::PretrainConfig pc = cfg.pretrain;
            pc.max_epochs = cfg.sweep_epochs;
            pc.patience = cfg.sweep_epochs;
            auto result = contrastive::pretrain(final_records, cfg.cohort.modalities, cell_split,
                                                pc);
            auto table = encoder::build_pretrain_table(
                final_records, cfg.cohort.modalities,
                split::stays_in_fold(cell_split, split::Fold::Test));
            auto embeddings = fold_embeddings(*result.bank, table);
            double sil = latent_eval::modality_silhouette(embeddings).overall;
            auto rows = latent_eval::retrieval_report(
                embeddings, static_cast<int>(cfg.cohort.modalities.size()), {1});
            double r1 = 0.0;
            int n_rows = 0;
            for (const auto& row : rows) {
                r1 += row.value;
                ++n_rows;
            }
            w.row({mod_name, fmt_double(rate), fmt_double(sil),
                   n_rows ? fmt_double(r1 / n_rows) : "nan"});
        }
    }
    return 0;
}

}  // namespace mga::pipeline
