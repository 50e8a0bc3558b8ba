#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mga/encoder.hpp"
#include "mga/split.hpp"

namespace mga::contrastive {

// Value-level centroid machinery; embeddings[i] is modality i's unit vector
// for one patient, mask[i] its presence indicator.

// Normalized masked sum over j != anchor. Throws NumericError when the
// complement is empty (caller falls back to the global representation).
std::vector<double> complementary_centroid(
    const std::vector<std::vector<double>>& embeddings, int anchor,
    const std::vector<int>& mask);

// Normalized masked sum over all present modalities; requires C_k >= 1.
std::vector<double> global_representation(const std::vector<std::vector<double>>& embeddings,
                                          const std::vector<int>& mask);

// c_{i,m} when patient m has a nonempty complement for the anchor modality,
// else the global representation.
std::vector<double> negative_target(const std::vector<std::vector<double>>& embeddings,
                                    int anchor, const std::vector<int>& mask);

struct InfoNceResult {
    nn::Tensor loss;  // scalar, on the tape
    std::map<int, double> per_modality;
    int anchor_total = 0;
};

// Masked InfoNCE over a batch: anchors are modality embeddings with
// M[i,k] = 1 and C_k >= 2; positives are complementary centroids; negatives
// are the centroid-or-global targets of every other patient in the batch.
// Patients fully masked out (C_k = 0) join neither side. Returns nullopt when
// no modality has a valid anchor with at least one negative — that batch must
// be skipped, not scored zero.
std::optional<InfoNceResult> masked_infonce(nn::Tape& tape, const std::vector<nn::Tensor>& z,
                                            const encoder::PresenceMask& mask,
                                            const nn::Tensor& log_tau);

struct PretrainConfig {
    int latent_dim = 256;
    int hidden_dim = 512;
    double mlp_dropout = 0.3;
    double modality_dropout = 0.15;
    int batch_size = 128;
    int max_epochs = 100;
    int patience = 10;
    double lr = 1e-3;
    double weight_decay = 0.005;
    double tau_init = 0.07;
    double tau_min = 1e-3;
    double tau_max = 5.0;
    std::uint64_t seed = 1;
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double tau = 0.0;
    std::vector<double> per_modality;  // train means; -1 when a modality never anchored
};

struct PretrainResult {
    std::unique_ptr<encoder::EncoderBank> bank;
    nn::ParamStore loss_params;  // log_tau
    std::vector<EpochLog> log;
    int best_epoch = -1;
    double best_val = 0.0;
};

double tau_value(const nn::ParamStore& loss_params);

// Adam over encoders, tokens and log_tau with early stopping on validation
// loss; the best-epoch parameters are restored before returning.
PretrainResult pretrain(const std::vector<cohort::ModalityRecord>& records,
                        const std::vector<cohort::ModalitySpec>& modalities,
                        const split::CohortSplit& split, const PretrainConfig& config);

void write_pretrain_log_csv(const std::string& path, const std::vector<EpochLog>& log,
                            const std::vector<cohort::ModalitySpec>& modalities);

}  // namespace mga::contrastive
