#include "mga/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "mga/csv.hpp"
#include "mga/errors.hpp"

namespace mga::cohort {

namespace {

void validate(const GeneratorConfig& c) {
    if (c.n_patients <= 0) throw ConfigError("generator: n_patients must be positive");
    if (c.modalities.empty()) throw ConfigError("generator: no modalities configured");
    for (const auto& m : c.modalities) {
        if (m.feature_dim <= 0) throw ConfigError("generator: feature_dim must be positive");
        if (m.presence_prob < 0.0 || m.presence_prob > 1.0)
            throw ConfigError("generator: presence_prob outside [0,1] for " + m.name);
    }
    if (c.events_min < 0 || c.events_max < c.events_min)
        throw ConfigError("generator: bad events_per_stay range");
    if (c.latent_dim <= 0) throw ConfigError("generator: latent_dim must be positive");
    if (c.orphan_fraction < 0.0 || c.orphan_fraction > 1.0)
        throw ConfigError("generator: orphan_fraction outside [0,1]");
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct ViewMatrices {
    // per modality: [feature_dim x latent_dim] row-major, plus noise scale
    // and a population baseline added to every stay's features
    std::vector<std::vector<double>> a;
    std::vector<double> noise;
    std::vector<std::vector<double>> baseline;
};

ViewMatrices draw_views(const GeneratorConfig& c, const std::vector<double>& w_mort, Rng& rng) {
    ViewMatrices v;
    for (std::size_t mi = 0; mi < c.modalities.size(); ++mi) {
        const auto& spec = c.modalities[mi];
        std::vector<double> a(static_cast<std::size_t>(spec.feature_dim) *
                              static_cast<std::size_t>(c.latent_dim));
        double scale = 1.0 / std::sqrt(static_cast<double>(c.latent_dim));
        for (auto& x : a) x = rng.normal(0.0, scale);
        if (c.view_rank > 0 && c.view_rank < c.latent_dim) {
            // restrict the view to a random view_rank-dimensional subspace:
            // Gram-Schmidt a random basis, then project each feature row
            int L = c.latent_dim, r = c.view_rank;
            std::vector<std::vector<double>> basis;
            while (static_cast<int>(basis.size()) < r) {
                std::vector<double> v(static_cast<std::size_t>(L));
                for (auto& x : v) x = rng.normal();
                for (const auto& b : basis) {
                    double dot = 0.0;
                    for (int t = 0; t < L; ++t) dot += v[static_cast<std::size_t>(t)] * b[static_cast<std::size_t>(t)];
                    for (int t = 0; t < L; ++t) v[static_cast<std::size_t>(t)] -= dot * b[static_cast<std::size_t>(t)];
                }
                double nrm = 0.0;
                for (double x : v) nrm += x * x;
                if (nrm < 1e-6) continue;
                nrm = std::sqrt(nrm);
                for (auto& x : v) x /= nrm;
                basis.push_back(std::move(v));
            }
            for (int f = 0; f < spec.feature_dim; ++f) {
                double* row = a.data() + static_cast<std::size_t>(f) * static_cast<std::size_t>(L);
                std::vector<double> projected(static_cast<std::size_t>(L), 0.0);
                for (const auto& b : basis) {
                    double dot = 0.0;
                    for (int t = 0; t < L; ++t) dot += row[t] * b[static_cast<std::size_t>(t)];
                    for (int t = 0; t < L; ++t) projected[static_cast<std::size_t>(t)] += dot * b[static_cast<std::size_t>(t)];
                }
                // rescale so feature variance is unchanged by the projection
                double gain = std::sqrt(static_cast<double>(L) / r);
                for (int t = 0; t < L; ++t) row[t] = gain * projected[static_cast<std::size_t>(t)];
            }
        }
        double noise = c.view_noise;
        if (c.sink_engineered) {
            if (spec.name == "admission") {
                // constant context token: identical features for every stay,
                // a loss-neutral place for surplus attention to park
                std::fill(a.begin(), a.end(), 0.0);
                noise = 0.0;
            } else if (spec.name == "demographics") {
                // a direct severity prior: only the label direction survives
                for (int f = 0; f < spec.feature_dim; ++f)
                    for (int l = 0; l < c.latent_dim; ++l)
                        a[static_cast<std::size_t>(f) * c.latent_dim + l] =
                            (f == 0) ? 0.6 * w_mort[static_cast<std::size_t>(l)]
                                     : 0.05 * a[static_cast<std::size_t>(f) * c.latent_dim + l];
                noise = 0.25;
            } else if (spec.name == "vitals") {
                noise = 0.01;  // the causally informative channel
            } else if (spec.name == "labs") {
                noise = 0.1;  // code-like channel, binarized at sampling time
            } else {
                std::fill(a.begin(), a.end(), 0.0);  // pure noise channel
                noise = 1.0;
            }
        }
        std::vector<double> baseline(static_cast<std::size_t>(spec.feature_dim));
        for (auto& x : baseline) x = c.baseline_scale * rng.normal();
        v.a.push_back(std::move(a));
        v.noise.push_back(noise);
        v.baseline.push_back(std::move(baseline));
    }
    return v;
}

std::string format_id(const char* prefix, int n) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%s%07d", prefix, n);
    return buf;
}

}  // namespace

GeneratorConfig mimic_like_config(int n_patients, std::uint64_t seed) {
    GeneratorConfig c;
    c.n_patients = n_patients;
    c.seed = seed;
    c.view_rank = 8;
    // heavy missingness: single-modality stays dominate
    c.modalities = {
        {"demographics", 12, 0.98, true},
        {"timeseries", 24, 0.18, false},
        {"cxr", 20, 0.18, false},
        {"discharge_note", 18, 0.18, false},
        {"radiology_note", 16, 0.18, false},
    };
    return c;
}

GeneratorConfig eicu_like_config(int n_patients, std::uint64_t seed) {
    GeneratorConfig c;
    c.n_patients = n_patients;
    c.seed = seed;
    c.view_rank = 8;
    // dense regime: most stays carry all six modalities
    c.modalities = {
        {"demographics", 10, 0.93, true}, {"diagnosis", 14, 0.93, false},
        {"treatment", 14, 0.93, false},   {"medication", 12, 0.93, false},
        {"lab", 20, 0.93, false},         {"aps", 8, 0.93, true},
    };
    return c;
}

GeneratorConfig sink_config(int n_patients, std::uint64_t seed) {
    GeneratorConfig c;
    c.n_patients = n_patients;
    c.seed = seed;
    c.sink_engineered = true;
    c.orphan_fraction = 0.0;
    c.stays_per_patient_max = 1;
    c.events_min = 6;
    c.events_max = 10;
    // the admission channel sorts first at offset zero and soaks up the
    // first-position attention surplus, keeping demographic mass content-driven
    c.modalities = {
        {"admission", 12, 1.0, true, 1.0},
        {"demographics", 6, 1.0, true, 1.0},
        {"vitals", 16, 0.5, false, 1.0},
        {"labs", 24, 1.0, false, 1.0},
    };
    return c;
}

Cohort generate(const GeneratorConfig& config) {
    validate(config);
    Cohort out;
    out.config = config;
    Rng rng(config.seed);

    const int L = config.latent_dim;
    std::vector<double> w_mort(static_cast<std::size_t>(L));
    {
        double ss = 0.0;
        for (auto& x : w_mort) {
            x = rng.normal();
            ss += x * x;
        }
        for (auto& x : w_mort) x /= std::sqrt(ss);
    }
    std::vector<std::vector<double>> w_pheno(kPhenotypeCount);
    std::vector<double> b_pheno(kPhenotypeCount);
    for (int p = 0; p < kPhenotypeCount; ++p) {
        w_pheno[static_cast<std::size_t>(p)].resize(static_cast<std::size_t>(L));
        double ss = 0.0;
        for (auto& x : w_pheno[static_cast<std::size_t>(p)]) {
            x = rng.normal();
            ss += x * x;
        }
        for (auto& x : w_pheno[static_cast<std::size_t>(p)]) x /= std::sqrt(ss);
        b_pheno[static_cast<std::size_t>(p)] = rng.normal(-1.5, 0.5);
    }
    std::vector<double> w_los(static_cast<std::size_t>(L));
    {
        double ss = 0.0;
        for (auto& x : w_los) {
            x = rng.normal();
            ss += x * x;
        }
        for (auto& x : w_los) x /= std::sqrt(ss);
    }
    ViewMatrices views = draw_views(config, w_mort, rng);

    std::vector<std::size_t> dynamic_mods;
    for (std::size_t mi = 0; mi < config.modalities.size(); ++mi)
        if (!config.modalities[mi].is_static) dynamic_mods.push_back(mi);

    int stay_seq = 0;
    for (int pi = 0; pi < config.n_patients; ++pi) {
        bool orphan = rng.bernoulli(config.orphan_fraction);
        int n_stays = orphan ? 1 : 1 + rng.uniform_int(config.stays_per_patient_max);
        std::string patient_id = orphan ? std::string() : format_id("p", pi);

        for (int si = 0; si < n_stays; ++si) {
            // latent state per stay
            std::vector<double> state(static_cast<std::size_t>(L));
            for (auto& x : state) x = rng.normal();

            std::vector<bool> present(config.modalities.size());
            int n_present = 0;
            for (std::size_t mi = 0; mi < config.modalities.size(); ++mi) {
                present[mi] = rng.bernoulli(config.modalities[mi].presence_prob);
                if (present[mi]) ++n_present;
            }

            double mort_logit = 0.0;
            for (int l = 0; l < L; ++l)
                mort_logit += w_mort[static_cast<std::size_t>(l)] * state[static_cast<std::size_t>(l)];
            StayLabels labels;
            labels.mortality = rng.bernoulli(sigmoid(config.label_model.mortality_scale * mort_logit +
                                                     config.label_model.mortality_bias))
                                   ? 1
                                   : 0;
            labels.phenotypes.resize(kPhenotypeCount);
            for (int p = 0; p < kPhenotypeCount; ++p) {
                double z = 0.0;
                for (int l = 0; l < L; ++l)
                    z += w_pheno[static_cast<std::size_t>(p)][static_cast<std::size_t>(l)] *
                         state[static_cast<std::size_t>(l)];
                labels.phenotypes[static_cast<std::size_t>(p)] =
                    rng.bernoulli(sigmoid(config.label_model.phenotype_scale * z +
                                          b_pheno[static_cast<std::size_t>(p)]))
                        ? 1
                        : 0;
            }
            double los_z = 0.0;
            for (int l = 0; l < L; ++l)
                los_z += w_los[static_cast<std::size_t>(l)] * state[static_cast<std::size_t>(l)];
            double raw_los = std::exp(config.label_model.los_log_mean +
                                      config.label_model.los_slope * los_z +
                                      config.label_model.los_noise * rng.normal());
            labels.los_hours = std::clamp(raw_los, kMinLosHours, kMaxLosHours);

            int n_events = config.events_min == config.events_max
                               ? config.events_min
                               : config.events_min +
                                     rng.uniform_int(config.events_max - config.events_min + 1);

            if (n_present == 0) {
                ++out.dropped_stays;
                continue;
            }

            std::string stay_id = format_id("s", stay_seq++);
            out.labels[stay_id] = labels;
            out.latent[stay_id] = state;

            auto make_features = [&](std::size_t mi) {
                const auto& spec = config.modalities[mi];
                std::vector<double> f(static_cast<std::size_t>(spec.feature_dim));
                const auto& a = views.a[mi];
                bool code_like = config.sink_engineered && spec.name == "labs";
                for (int fi = 0; fi < spec.feature_dim; ++fi) {
                    double v = 0.0;
                    for (int l = 0; l < L; ++l)
                        v += a[static_cast<std::size_t>(fi) * static_cast<std::size_t>(L) +
                               static_cast<std::size_t>(l)] *
                             state[static_cast<std::size_t>(l)];
                    if (code_like) {
                        // sparse indicator features, like one-hot medical codes
                        f[static_cast<std::size_t>(fi)] =
                            (v + views.noise[mi] * rng.normal() > 0.25) ? 1.0 : 0.0;
                    } else {
                        f[static_cast<std::size_t>(fi)] =
                            views.baseline[mi][static_cast<std::size_t>(fi)] + v +
                            views.noise[mi] * rng.normal();
                    }
                }
                return f;
            };

            std::vector<std::size_t> present_dynamic;
            for (std::size_t mi : dynamic_mods)
                if (present[mi]) present_dynamic.push_back(mi);

            for (std::size_t mi = 0; mi < config.modalities.size(); ++mi) {
                if (!present[mi]) {
                    ModalityRecord rec;
                    rec.patient_id = patient_id;
                    rec.stay_id = stay_id;
                    rec.modality = static_cast<int>(mi);
                    rec.absent = true;
                    out.records.push_back(std::move(rec));
                } else if (config.modalities[mi].is_static) {
                    ModalityRecord rec;
                    rec.patient_id = patient_id;
                    rec.stay_id = stay_id;
                    rec.modality = static_cast<int>(mi);
                    rec.offset_minutes = 0.0;
                    rec.features = make_features(mi);
                    out.records.push_back(std::move(rec));
                }
            }
            if (!present_dynamic.empty()) {
                // every present dynamic modality emits at least one event, so
                // record-level presence equals the drawn presence mask; extra
                // events are sampled by event_weight
                std::vector<std::size_t> event_mods(present_dynamic);
                int extra = n_events - static_cast<int>(present_dynamic.size());
                double total_w = 0.0;
                for (std::size_t mi : present_dynamic)
                    total_w += config.modalities[mi].event_weight;
                for (int e = 0; e < extra; ++e) {
                    double u = rng.uniform() * total_w;
                    std::size_t chosen = present_dynamic.back();
                    for (std::size_t mi : present_dynamic) {
                        u -= config.modalities[mi].event_weight;
                        if (u <= 0.0) {
                            chosen = mi;
                            break;
                        }
                    }
                    event_mods.push_back(chosen);
                }
                for (std::size_t mi : event_mods) {
                    ModalityRecord rec;
                    rec.patient_id = patient_id;
                    rec.stay_id = stay_id;
                    rec.modality = static_cast<int>(mi);
                    rec.offset_minutes = rng.uniform(0.0, labels.los_hours * 60.0);
                    rec.features = make_features(mi);
                    out.records.push_back(std::move(rec));
                }
            }
        }
    }

    if (out.labels.empty())
        throw DataError("generator: no stays retained (all draws had zero present modalities)");
    return out;
}

double sign_log_scale(double x) {
    if (x == 0.0) return 0.0;
    return (x > 0.0 ? 1.0 : -1.0) * std::log1p(std::abs(x));
}

std::vector<std::pair<int, double>> carry_forward_impute(const std::vector<HourBin>& series,
                                                         double global_normal) {
    for (std::size_t i = 1; i < series.size(); ++i)
        if (series[i].hour < series[i - 1].hour)
            throw DataError("carry_forward_impute: bins not sorted ascending");
    std::vector<std::pair<int, double>> out;
    out.reserve(series.size());
    bool seen = false;
    double last = global_normal;
    for (const auto& bin : series) {
        if (bin.value.has_value()) {
            last = *bin.value;
            seen = true;
        }
        out.emplace_back(bin.hour, seen ? last : global_normal);
    }
    return out;
}

void write_records_jsonl(const std::string& path, const std::vector<ModalityRecord>& records,
                         const std::vector<ModalitySpec>& modalities) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (const auto& r : records) {
        nlohmann::json j;
        j["patient_id"] = r.patient_id;
        j["stay_id"] = r.stay_id;
        j["modality"] = modalities[static_cast<std::size_t>(r.modality)].name;
        if (r.absent) {
            j["absent"] = true;
        } else {
            j["offset_minutes"] = r.offset_minutes;
            j["features"] = r.features;
        }
        out << j.dump() << '\n';
    }
}

std::vector<ModalityRecord> read_records_jsonl(const std::string& path,
                                               const std::vector<ModalitySpec>& modalities) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    std::vector<ModalityRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        ModalityRecord r;
        r.patient_id = j.at("patient_id").get<std::string>();
        r.stay_id = j.at("stay_id").get<std::string>();
        r.modality = modality_index(modalities, j.at("modality").get<std::string>());
        if (j.contains("absent") && j["absent"].get<bool>()) {
            r.absent = true;
        } else {
            r.offset_minutes = j.at("offset_minutes").get<double>();
            r.features = j.at("features").get<std::vector<double>>();
        }
        records.push_back(std::move(r));
    }
    return records;
}

void write_labels_csv(const std::string& path, const std::map<std::string, StayLabels>& labels) {
    CsvWriter w(path);
    std::vector<std::string> header = {"stay_id", "mortality"};
    for (int p = 0; p < kPhenotypeCount; ++p) header.push_back("pheno_" + std::to_string(p));
    header.push_back("los_hours");
    w.row(header);
    for (const auto& [stay, l] : labels) {
        std::vector<std::string> row = {stay, std::to_string(l.mortality)};
        for (int p = 0; p < kPhenotypeCount; ++p)
            row.push_back(std::to_string(l.phenotypes[static_cast<std::size_t>(p)]));
        row.push_back(fmt_double(l.los_hours));
        w.row(row);
    }
}

std::map<std::string, StayLabels> read_labels_csv(const std::string& path) {
    auto rows = read_csv(path);
    if (rows.empty()) throw DataError("labels csv is empty: " + path);
    std::map<std::string, StayLabels> labels;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& row = rows[i];
        if (row.size() != static_cast<std::size_t>(kPhenotypeCount) + 3)
            throw DataError("labels csv: bad column count at line " + std::to_string(i + 1));
        StayLabels l;
        l.mortality = std::stoi(row[1]);
        for (int p = 0; p < kPhenotypeCount; ++p)
            l.phenotypes.push_back(std::stoi(row[static_cast<std::size_t>(p) + 2]));
        l.los_hours = std::stod(row[static_cast<std::size_t>(kPhenotypeCount) + 2]);
        labels[row[0]] = std::move(l);
    }
    return labels;
}

int modality_index(const std::vector<ModalitySpec>& modalities, const std::string& name) {
    for (std::size_t i = 0; i < modalities.size(); ++i)
        if (modalities[i].name == name) return static_cast<int>(i);
    throw DataError("unknown modality: " + name);
}

}  // namespace mga::cohort
