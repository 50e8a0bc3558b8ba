#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mga/encoder.hpp"
#include "mga/timeline.hpp"

namespace mga::decoder {

enum class Task { Mortality, Phenotyping, Los };

std::string task_name(Task t);
Task task_from_name(const std::string& name);

struct DecoderConfig {
    int d_model = 128;
    int layers = 4;
    int heads = 4;
    int ffn_mult = 4;
    double dropout = 0.1;
    Task task = Task::Mortality;
    int latent_dim = 256;  // width of incoming event embeddings
    int max_seq = 128;
    bool keep_all_layer_attention = false;  // final layer is always materialized
    std::uint64_t init_seed = 1;
};

struct ForwardResult {
    nn::Tensor slot_logits;  // [n_slots, out_dim], on the tape
    // final-layer attention, one [T*T] row-major matrix per head
    std::vector<std::vector<double>> final_attention;
    // optional earlier layers, outermost index = layer (final layer excluded)
    std::vector<std::vector<std::vector<double>>> earlier_attention;
    std::vector<int> predict_positions;
    int seq_len = 0;
};

// Small causal transformer over projected event/[PREDICT] sequences with a
// task head applied at every PREDICT position. The shared [PREDICT] embedding
// lives in the event latent space and is projected like any event; minute
// offsets enter sign-log-scaled as an extra feature column before projection.
class SeqDecoder {
public:
    explicit SeqDecoder(DecoderConfig cfg);

    // bank encodes events lacking a cached embedding (the scratch path; its
    // dropout runs only when the bank is trainable and train is set)
    ForwardResult forward(nn::Tape& tape, const timeline::EventTimeline& timeline,
                          encoder::EncoderBank* bank, bool train, Rng* rng);

    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    const DecoderConfig& config() const { return cfg_; }
    int out_dim() const;

private:
    DecoderConfig cfg_;
    nn::ParamStore params_;
};

// Task losses over per-slot outputs (supervision at every PREDICT slot,
// equal weight).
nn::Tensor loss_mortality(nn::Tape& tape, const nn::Tensor& slot_logits, int label,
                          double pos_weight);
nn::Tensor loss_phenotyping(nn::Tape& tape, const nn::Tensor& slot_logits,
                            const std::vector<int>& labels,
                            const std::vector<double>& pos_weights);
nn::Tensor loss_los(nn::Tape& tape, const nn::Tensor& slot_preds, double los_hours);

nn::Tensor timeline_loss(nn::Tape& tape, Task task, const nn::Tensor& slot_logits,
                         const cohort::StayLabels& labels, double mort_pos_weight,
                         const std::vector<double>& pheno_pos_weights);

// #neg/#pos on the training split; throws DataError when a class is absent.
double mortality_pos_weight(const std::vector<int>& labels);
// per-class #neg/#pos capped at 100; capped/absent classes are reported.
std::vector<double> phenotype_pos_weights(const std::vector<std::vector<int>>& labels_per_class,
                                          double cap = 100.0,
                                          std::vector<int>* capped_classes = nullptr);

// Train-time modality dropout at timeline level: each present modality drops
// with probability p (its events are removed); when every modality would
// drop, the timeline is kept unchanged.
timeline::EventTimeline drop_timeline_modalities(const timeline::EventTimeline& tl, double p,
                                                 Rng& rng);

// Eval-mode per-slot predictions: sigmoid probabilities for classification,
// raw values for regression.
struct Trajectory {
    std::vector<std::vector<double>> per_slot;
    std::vector<double> slot_offsets;
    std::vector<long> event_uids;
    std::vector<double> final_prediction() const {
        return per_slot.empty() ? std::vector<double>{} : per_slot.back();
    }
};

Trajectory predict(SeqDecoder& dec, const timeline::EventTimeline& timeline,
                   encoder::EncoderBank* bank);

struct FinetuneConfig {
    DecoderConfig decoder;
    double lr = 1e-3;
    double weight_decay = 0.0;
    int batch_size = 16;
    int max_epochs = 30;
    int patience = 5;
    double modality_dropout = 0.20;
    std::uint64_t seed = 1;
};

struct FinetuneEpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct FinetuneResult {
    std::unique_ptr<SeqDecoder> decoder;
    std::vector<FinetuneEpochLog> log;
    int best_epoch = -1;
    double best_val = 0.0;
    bool halted_non_finite = false;
};

// Adam with early stopping on validation loss. A frozen bank has its event
// embeddings cached up front; an unfrozen (scratch) bank trains jointly with
// the decoder. On divergence the last finite parameters are restored and the
// run is marked halted.
FinetuneResult finetune(encoder::EncoderBank& bank, std::vector<timeline::EventTimeline>& train,
                        std::vector<timeline::EventTimeline>& val, const FinetuneConfig& config);

// Fills TimelineEvent::embedding via eval-mode encoding (frozen-path cache).
void cache_embeddings(encoder::EncoderBank& bank, std::vector<timeline::EventTimeline>& timelines);

void write_finetune_log_csv(const std::string& path, const std::vector<FinetuneEpochLog>& log);
void write_trajectories_csv(const std::string& path, const std::vector<std::string>& stay_ids,
                            const std::vector<Trajectory>& trajectories, Task task);

}  // namespace mga::decoder
