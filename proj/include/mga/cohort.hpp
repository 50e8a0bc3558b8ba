#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mga/rng.hpp"

namespace mga::cohort {

inline constexpr int kPhenotypeCount = 25;
inline constexpr double kMinLosHours = 12.0;
inline constexpr double kMaxLosHours = 720.0;

struct ModalitySpec {
    std::string name;
    int feature_dim = 8;
    double presence_prob = 1.0;
    bool is_static = false;  // static modalities are recorded once at offset 0.0
    double event_weight = 1.0;  // relative share of a stay's dynamic events
};

// One patient's feature vector for one modality, or an explicit absence marker.
struct ModalityRecord {
    std::string patient_id;  // empty = orphan stay
    std::string stay_id;
    int modality = 0;
    double offset_minutes = 0.0;
    bool absent = false;
    std::vector<double> features;  // empty when absent
};

struct StayLabels {
    int mortality = 0;
    std::vector<int> phenotypes;  // 25-dim {0,1}
    double los_hours = 0.0;
};

// Coefficients linking the hidden latent state to labels and modality views.
struct LabelModel {
    double mortality_scale = 4.0;
    double mortality_bias = -3.0;
    double phenotype_scale = 3.0;
    double los_log_mean = 4.3;   // ~73h median
    double los_slope = 0.5;
    double los_noise = 0.35;
};

struct GeneratorConfig {
    int n_patients = 1000;
    std::vector<ModalitySpec> modalities;
    int events_min = 2;  // dynamic events per stay
    int events_max = 8;
    LabelModel label_model;
    std::uint64_t seed = 1;

    int latent_dim = 16;
    double view_noise = 0.1;
    // each modality's linear view spans a random subspace of this rank, so
    // no single modality carries the whole latent state (0 = full rank)
    int view_rank = 0;
    // population-level baseline per modality feature (clinical features sit
    // around characteristic normal values, not zero)
    double baseline_scale = 1.5;
    int stays_per_patient_max = 3;  // identified patients; orphans get one stay
    double orphan_fraction = 0.2;

    // sink regime: demographics carries only the label direction (plus noise),
    // one modality is a near-noiseless view, one is pure noise
    bool sink_engineered = false;
};

struct Cohort {
    GeneratorConfig config;
    std::vector<ModalityRecord> records;
    std::map<std::string, StayLabels> labels;
    // true latent state per stay, exposed for diagnostics only (never exported)
    std::map<std::string, std::vector<double>> latent;
    int dropped_stays = 0;  // zero-present-modality draws
};

// Presets mirroring the two dataset regimes plus the sink-engineered one.
GeneratorConfig mimic_like_config(int n_patients, std::uint64_t seed);
GeneratorConfig eicu_like_config(int n_patients, std::uint64_t seed);
GeneratorConfig sink_config(int n_patients, std::uint64_t seed);

Cohort generate(const GeneratorConfig& config);

// sgn(x) * log(1 + |x|)
double sign_log_scale(double x);

struct HourBin {
    int hour = 0;
    std::optional<double> value;
};

// Carry-forward imputation; bins with no prior observation take global_normal.
std::vector<std::pair<int, double>> carry_forward_impute(const std::vector<HourBin>& series,
                                                         double global_normal);

// External formats: JSONL records, labels CSV with header
// stay_id,mortality,pheno_0..pheno_24,los_hours
void write_records_jsonl(const std::string& path, const std::vector<ModalityRecord>& records,
                         const std::vector<ModalitySpec>& modalities);
std::vector<ModalityRecord> read_records_jsonl(const std::string& path,
                                               const std::vector<ModalitySpec>& modalities);
void write_labels_csv(const std::string& path, const std::map<std::string, StayLabels>& labels);
std::map<std::string, StayLabels> read_labels_csv(const std::string& path);

int modality_index(const std::vector<ModalitySpec>& modalities, const std::string& name);

}  // namespace mga::cohort
