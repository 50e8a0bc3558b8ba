#include "mga/encoder.hpp"

#include <algorithm>
#include <map>

#include "mga/errors.hpp"
#include "mga/optim.hpp"

namespace mga::encoder {

using nn::Tape;
using nn::Tensor;

PresenceMask apply_modality_dropout(const PresenceMask& mask, double drop_p, Rng& rng) {
    if (drop_p < 0.0 || drop_p >= 1.0)
        throw ConfigError("modality dropout must lie in [0,1)");
    PresenceMask out = mask;
    if (drop_p == 0.0) return out;
    for (int i = 0; i < mask.n_modalities; ++i)
        for (int k = 0; k < mask.n_patients; ++k)
            if (mask.at(i, k) && rng.bernoulli(drop_p)) out.set(i, k, false);
    return out;
}

std::string source_name(Source s) {
    switch (s) {
        case Source::Encoded: return "ENCODED";
        case Source::MissingToken: return "MISSING_TOKEN";
        case Source::Dropped: return "DROPPED";
    }
    return "?";
}

EncoderBank::EncoderBank(EncoderBankConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.modalities.empty()) throw ConfigError("encoder bank: no modalities");
    if (cfg_.latent_dim <= 0 || cfg_.hidden_dim <= 0)
        throw ConfigError("encoder bank: dimensions must be positive");
    Rng rng(cfg_.init_seed);
    for (const auto& spec : cfg_.modalities) {
        const std::string& n = spec.name;
        Tensor& w1 = params_.create(n + ".w1", {spec.feature_dim, cfg_.hidden_dim}, true);
        Tensor& b1 = params_.create(n + ".b1", {cfg_.hidden_dim});
        nn::init_linear_default(w1, b1, rng);
        Tensor& g1 = params_.create(n + ".ln1.g", {cfg_.hidden_dim});
        std::fill(g1.data(), g1.data() + g1.size(), 1.0);
        params_.create(n + ".ln1.b", {cfg_.hidden_dim});
        Tensor& w2 = params_.create(n + ".w2", {cfg_.hidden_dim, cfg_.latent_dim}, true);
        Tensor& b2 = params_.create(n + ".b2", {cfg_.latent_dim});
        nn::init_linear_default(w2, b2, rng);
        Tensor& g2 = params_.create(n + ".ln2.g", {cfg_.latent_dim});
        std::fill(g2.data(), g2.data() + g2.size(), 1.0);
        params_.create(n + ".ln2.b", {cfg_.latent_dim});
        nn::init_normal(params_.create(n + ".token", {cfg_.latent_dim}), rng,
                        cfg_.token_init_sigma);
    }
}

Tensor& EncoderBank::missing_token(int modality) {
    return params_.tensor(cfg_.modalities[static_cast<std::size_t>(modality)].name + ".token");
}

Tensor EncoderBank::encode_present(Tape& tape, int modality, const Tensor& x, bool train,
                                   Rng* dropout_rng) {
    const auto& spec = cfg_.modalities[static_cast<std::size_t>(modality)];
    if (x.ndim() != 2 || x.dim(1) != spec.feature_dim) {
        throw ShapeError("encoder " + spec.name + ": features " + x.shape_str() +
                         " do not match feature_dim " + std::to_string(spec.feature_dim));
    }
    const std::string& n = spec.name;
    Tensor h = nn::dense(tape, x, params_.tensor(n + ".w1"), params_.tensor(n + ".b1"));
    h = nn::layer_norm(tape, h, params_.tensor(n + ".ln1.g"), params_.tensor(n + ".ln1.b"), 1e-5);
    h = nn::relu(tape, h);
    if (train && cfg_.mlp_dropout > 0.0) {
        if (!dropout_rng) throw ConfigError("encoder: train mode needs a dropout rng");
        std::vector<double> mask(h.size());
        double keep = 1.0 - cfg_.mlp_dropout;
        for (auto& v : mask) v = dropout_rng->bernoulli(keep) ? 1.0 / keep : 0.0;
        h = nn::dropout(tape, h, mask);
    }
    h = nn::dense(tape, h, params_.tensor(n + ".w2"), params_.tensor(n + ".b2"));
    h = nn::layer_norm(tape, h, params_.tensor(n + ".ln2.g"), params_.tensor(n + ".ln2.b"), 1e-5);
    return h;
}

std::vector<Tensor> EncoderBank::encode_all(Tape& tape, const std::vector<Tensor>& features,
                                            const PresenceMask& mask, bool train,
                                            Rng* dropout_rng) {
    if (static_cast<int>(features.size()) != static_cast<int>(cfg_.modalities.size()) ||
        mask.n_modalities != static_cast<int>(cfg_.modalities.size())) {
        throw ShapeError("encode_all: modality count mismatch");
    }
    int n = mask.n_patients;
    std::vector<Tensor> out;
    for (std::size_t mi = 0; mi < cfg_.modalities.size(); ++mi) {
        int i = static_cast<int>(mi);
        std::vector<int> present_idx, absent_idx;
        for (int k = 0; k < n; ++k) (mask.at(i, k) ? present_idx : absent_idx).push_back(k);

        Tensor assembled;
        if (!present_idx.empty()) {
            Tensor x_present = nn::gather_rows(tape, features[mi], present_idx);
            Tensor h = encode_present(tape, i, x_present, train, dropout_rng);
            assembled = nn::scatter_rows(tape, h, present_idx, n);
            if (!absent_idx.empty()) {
                Tensor tok = nn::broadcast_row(tape, missing_token(i),
                                               static_cast<int>(absent_idx.size()));
                assembled = nn::add(tape, assembled, nn::scatter_rows(tape, tok, absent_idx, n));
            }
        } else {
            assembled = nn::broadcast_row(tape, missing_token(i), n);
        }
        out.push_back(nn::l2_normalize_rows(tape, assembled, 1e-12));
    }
    return out;
}

Tensor EncoderBank::encode_events(Tape& tape, int modality, const Tensor& features, bool train,
                                  Rng* dropout_rng) {
    Tensor h = encode_present(tape, modality, features, train, dropout_rng);
    return nn::l2_normalize_rows(tape, h, 1e-12);
}

std::vector<LatentEmbedding> EncoderBank::encode_batch(
    const std::vector<std::string>& stay_ids,
    const std::vector<std::vector<std::optional<std::vector<double>>>>& features, double drop_p,
    bool train, std::uint64_t seed) {
    int n = static_cast<int>(stay_ids.size());
    int m = static_cast<int>(cfg_.modalities.size());
    if (static_cast<int>(features.size()) != n)
        throw ShapeError("encode_batch: one feature row list per stay required");

    PresenceMask base(m, n);
    std::vector<Tensor> mats;
    for (int i = 0; i < m; ++i) {
        Tensor x({n, cfg_.modalities[static_cast<std::size_t>(i)].feature_dim});
        mats.push_back(x);
    }
    for (int k = 0; k < n; ++k) {
        if (static_cast<int>(features[static_cast<std::size_t>(k)].size()) != m)
            throw ShapeError("encode_batch: one optional feature vector per modality required");
        for (int i = 0; i < m; ++i) {
            const auto& f = features[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
            if (!f.has_value()) continue;
            int dim = cfg_.modalities[static_cast<std::size_t>(i)].feature_dim;
            if (static_cast<int>(f->size()) != dim)
                throw ShapeError("encode_batch: feature dim mismatch for modality " +
                                 cfg_.modalities[static_cast<std::size_t>(i)].name);
            base.set(i, k, true);
            for (int j = 0; j < dim; ++j) mats[static_cast<std::size_t>(i)].at(k, j) = (*f)[static_cast<std::size_t>(j)];
        }
    }

    Rng rng(seed);
    PresenceMask routed = train ? apply_modality_dropout(base, drop_p, rng) : base;
    Rng mlp_rng = rng.fork(1);
    Tape tape(false);
    std::vector<Tensor> z = encode_all(tape, mats, routed, train, train ? &mlp_rng : nullptr);

    std::vector<LatentEmbedding> out;
    for (int i = 0; i < m; ++i) {
        for (int k = 0; k < n; ++k) {
            LatentEmbedding e;
            e.stay_id = stay_ids[static_cast<std::size_t>(k)];
            e.modality = i;
            if (routed.at(i, k)) {
                e.source = Source::Encoded;
            } else if (base.at(i, k)) {
                e.source = Source::Dropped;
            } else {
                e.source = Source::MissingToken;
            }
            const Tensor& zi = z[static_cast<std::size_t>(i)];
            e.vector.assign(zi.data() + static_cast<std::size_t>(k) * static_cast<std::size_t>(zi.cols()),
                            zi.data() + static_cast<std::size_t>(k + 1) * static_cast<std::size_t>(zi.cols()));
            out.push_back(std::move(e));
        }
    }
    return out;
}

void EncoderBank::freeze() {
    params_.set_trainable(false);
    frozen_ = true;
}

void EncoderBank::unfreeze() {
    params_.set_trainable(true);
    frozen_ = false;
}

PretrainTable build_pretrain_table(const std::vector<cohort::ModalityRecord>& records,
                                   const std::vector<cohort::ModalitySpec>& modalities,
                                   const std::vector<std::string>& stays) {
    PretrainTable table;
    table.stay_ids = stays;
    std::sort(table.stay_ids.begin(), table.stay_ids.end());
    std::map<std::string, int> stay_row;
    for (std::size_t i = 0; i < table.stay_ids.size(); ++i)
        stay_row[table.stay_ids[i]] = static_cast<int>(i);

    int n = static_cast<int>(table.stay_ids.size());
    int m = static_cast<int>(modalities.size());
    table.mask = PresenceMask(m, n);
    std::vector<std::vector<int>> counts(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        table.features.emplace_back(
            Tensor({n, modalities[static_cast<std::size_t>(i)].feature_dim}));
        counts[static_cast<std::size_t>(i)].assign(static_cast<std::size_t>(n), 0);
    }
    for (const auto& r : records) {
        auto it = stay_row.find(r.stay_id);
        if (it == stay_row.end() || r.absent) continue;
        int k = it->second;
        int i = r.modality;
        Tensor& mat = table.features[static_cast<std::size_t>(i)];
        for (std::size_t j = 0; j < r.features.size(); ++j)
            mat.at(k, static_cast<int>(j)) += r.features[j];
        ++counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
        table.mask.set(i, k, true);
    }
    for (int i = 0; i < m; ++i) {
        Tensor& mat = table.features[static_cast<std::size_t>(i)];
        for (int k = 0; k < n; ++k) {
            int c = counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
            if (c == 0) continue;
            for (int j = 0; j < mat.cols(); ++j)
                mat.at(k, j) = cohort::sign_log_scale(mat.at(k, j) / c);
        }
    }
    return table;
}

}  // namespace mga::encoder
