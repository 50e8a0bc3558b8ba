#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mga/cohort.hpp"
#include "mga/ops.hpp"
#include "mga/rng.hpp"
#include "mga/tensor.hpp"

namespace mga::encoder {

// Indicator mask M[i,k] over (modality, patient), with C_k = sum_i M[i,k].
struct PresenceMask {
    int n_modalities = 0;
    int n_patients = 0;
    std::vector<std::uint8_t> m;

    PresenceMask() = default;
    PresenceMask(int modalities, int patients)
        : n_modalities(modalities),
          n_patients(patients),
          m(static_cast<std::size_t>(modalities) * static_cast<std::size_t>(patients), 0) {}

    std::uint8_t at(int i, int k) const {
        return m[static_cast<std::size_t>(i) * static_cast<std::size_t>(n_patients) +
                 static_cast<std::size_t>(k)];
    }
    void set(int i, int k, bool present) {
        m[static_cast<std::size_t>(i) * static_cast<std::size_t>(n_patients) +
          static_cast<std::size_t>(k)] = present ? 1 : 0;
    }
    std::vector<int> counts() const {
        std::vector<int> c(static_cast<std::size_t>(n_patients), 0);
        for (int i = 0; i < n_modalities; ++i)
            for (int k = 0; k < n_patients; ++k) c[static_cast<std::size_t>(k)] += at(i, k);
        return c;
    }
};

// Each present entry is independently zeroed with probability drop_p.
PresenceMask apply_modality_dropout(const PresenceMask& mask, double drop_p, Rng& rng);

enum class Source { Encoded, MissingToken, Dropped };

std::string source_name(Source s);

// Unit vector in the shared latent space, tagged with its origin.
struct LatentEmbedding {
    std::string stay_id;
    int modality = 0;
    Source source = Source::Encoded;
    std::vector<double> vector;
};

struct EncoderBankConfig {
    std::vector<cohort::ModalitySpec> modalities;
    int latent_dim = 256;
    int hidden_dim = 512;
    double mlp_dropout = 0.3;
    double token_init_sigma = 0.02;
    std::uint64_t init_seed = 1;
};

// Per-modality MLP encoders into the shared space plus one learnable missing
// token per modality. Encoder shape: Linear -> LayerNorm -> ReLU ->
// Dropout -> Linear -> LayerNorm; outputs are L2-normalized by the callers
// through the assembly helpers below.
class EncoderBank {
public:
    explicit EncoderBank(EncoderBankConfig cfg);

    // Pretraining path. features[i] is [N, dim_i] with arbitrary values at
    // absent rows; returns per-modality [N, latent_dim] unit-row tensors where
    // masked-off rows carry the normalized missing token.
    std::vector<nn::Tensor> encode_all(nn::Tape& tape, const std::vector<nn::Tensor>& features,
                                       const PresenceMask& mask, bool train, Rng* dropout_rng);

    // Timeline path: encode a stack of raw event feature rows of one modality.
    // Rows are L2-normalized.
    nn::Tensor encode_events(nn::Tape& tape, int modality, const nn::Tensor& features,
                             bool train, Rng* dropout_rng);

    // Value-level spec surface: one optional feature vector per (patient,
    // modality); applies modality dropout internally when train is set.
    std::vector<LatentEmbedding> encode_batch(
        const std::vector<std::string>& stay_ids,
        const std::vector<std::vector<std::optional<std::vector<double>>>>& features,
        double drop_p, bool train, std::uint64_t seed);

    void freeze();
    void unfreeze();
    bool frozen() const { return frozen_; }

    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    const EncoderBankConfig& config() const { return cfg_; }
    nn::Tensor& missing_token(int modality);

private:
    nn::Tensor encode_present(nn::Tape& tape, int modality, const nn::Tensor& x, bool train,
                              Rng* dropout_rng);

    EncoderBankConfig cfg_;
    nn::ParamStore params_;
    bool frozen_ = false;
};

// Aggregated per-(stay, modality) pretraining features: event records of one
// modality are averaged, then sign-log scaled.
struct PretrainTable {
    std::vector<std::string> stay_ids;
    std::vector<nn::Tensor> features;  // per modality [N, dim_i]
    PresenceMask mask;
};

PretrainTable build_pretrain_table(const std::vector<cohort::ModalityRecord>& records,
                                   const std::vector<cohort::ModalitySpec>& modalities,
                                   const std::vector<std::string>& stays);

}  // namespace mga::encoder
