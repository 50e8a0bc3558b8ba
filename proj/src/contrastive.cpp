#include "mga/contrastive.hpp"

#include <algorithm>
#include <cmath>

#include "mga/csv.hpp"
#include "mga/errors.hpp"
#include "mga/optim.hpp"

namespace mga::contrastive {

using encoder::PresenceMask;
using nn::Tape;
using nn::Tensor;

namespace {

constexpr double kNormEps = 1e-12;
constexpr double kNegInf = -1e30;

std::vector<double> normalized_masked_sum(const std::vector<std::vector<double>>& embeddings,
                                          const std::vector<int>& mask, int skip) {
    if (embeddings.empty() || embeddings.size() != mask.size())
        throw ShapeError("centroid: embeddings/mask size mismatch");
    std::size_t d = embeddings.front().size();
    std::vector<double> sum(d, 0.0);
    int used = 0;
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        if (static_cast<int>(i) == skip || !mask[i]) continue;
        if (embeddings[i].size() != d) throw ShapeError("centroid: ragged embeddings");
        for (std::size_t j = 0; j < d; ++j) sum[j] += embeddings[i][j];
        ++used;
    }
    if (used == 0) throw NumericError("centroid: empty masked sum");
    double ss = 0.0;
    for (double v : sum) ss += v * v;
    double inv = 1.0 / std::sqrt(ss + kNormEps * kNormEps);
    for (double& v : sum) v *= inv;
    return sum;
}

}  // namespace

std::vector<double> complementary_centroid(const std::vector<std::vector<double>>& embeddings,
                                           int anchor, const std::vector<int>& mask) {
    return normalized_masked_sum(embeddings, mask, anchor);
}

std::vector<double> global_representation(const std::vector<std::vector<double>>& embeddings,
                                          const std::vector<int>& mask) {
    return normalized_masked_sum(embeddings, mask, -1);
}

std::vector<double> negative_target(const std::vector<std::vector<double>>& embeddings,
                                    int anchor, const std::vector<int>& mask) {
    int c = 0;
    for (int v : mask) c += (v != 0);
    int own = mask[static_cast<std::size_t>(anchor)] ? 1 : 0;
    if (c - own > 0) return complementary_centroid(embeddings, anchor, mask);
    return global_representation(embeddings, mask);
}

std::optional<InfoNceResult> masked_infonce(Tape& tape, const std::vector<Tensor>& z,
                                            const PresenceMask& mask, const Tensor& log_tau) {
    int m = mask.n_modalities;
    int n = mask.n_patients;
    if (static_cast<int>(z.size()) != m) throw ShapeError("masked_infonce: modality count mismatch");
    for (const auto& zi : z)
        if (zi.ndim() != 2 || zi.dim(0) != n)
            throw ShapeError("masked_infonce: embeddings must be [N,D], got " + zi.shape_str());

    std::vector<int> c_k = mask.counts();
    int participants = 0;
    for (int k = 0; k < n; ++k) participants += (c_k[static_cast<std::size_t>(k)] >= 1);

    // S = sum_j M_j z_j, shared by all centroids
    std::vector<Tensor> masked;
    Tensor s;
    for (int i = 0; i < m; ++i) {
        std::vector<double> col(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k) col[static_cast<std::size_t>(k)] = mask.at(i, k);
        Tensor mi = Tensor::from({n}, col);
        Tensor zm = nn::row_scale(tape, z[static_cast<std::size_t>(i)], mi);
        masked.push_back(zm);
        s = (i == 0) ? zm : nn::add(tape, s, zm);
    }
    Tensor zbar = nn::l2_normalize_rows(tape, s, kNormEps);

    Tensor inv_tau = nn::exp_elem(tape, nn::scale(tape, log_tau, -1.0));

    InfoNceResult res;
    Tensor total;
    int used_modalities = 0;
    for (int i = 0; i < m; ++i) {
        std::vector<int> anchors;
        for (int k = 0; k < n; ++k)
            if (mask.at(i, k) && c_k[static_cast<std::size_t>(k)] >= 2) anchors.push_back(k);
        if (anchors.empty() || participants < 2) continue;

        Tensor comp = nn::l2_normalize_rows(
            tape, nn::sub(tape, s, masked[static_cast<std::size_t>(i)]), kNormEps);

        // negative target per patient: complementary centroid when the
        // complement is nonempty, else the global representation
        std::vector<double> sel(static_cast<std::size_t>(n)), inv_sel(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k) {
            bool has_complement = c_k[static_cast<std::size_t>(k)] - mask.at(i, k) > 0;
            sel[static_cast<std::size_t>(k)] = has_complement ? 1.0 : 0.0;
            inv_sel[static_cast<std::size_t>(k)] = has_complement ? 0.0 : 1.0;
        }
        Tensor targets = nn::add(tape, nn::row_scale(tape, comp, Tensor::from({n}, sel)),
                                 nn::row_scale(tape, zbar, Tensor::from({n}, inv_sel)));

        Tensor pos = nn::rowwise_dot(tape, z[static_cast<std::size_t>(i)], comp);
        Tensor sims = nn::set_diag(tape, nn::matmul_nt(tape, z[static_cast<std::size_t>(i)], targets), pos);
        Tensor logits = nn::mul_scalar(tape, sims, inv_tau);

        // invalid negatives (C_m = 0) are masked to -inf before the logsumexp
        Tensor bias({n, n});
        for (int k = 0; k < n; ++k)
            for (int j = 0; j < n; ++j)
                if (j != k && c_k[static_cast<std::size_t>(j)] < 1) bias.at(k, j) = kNegInf;
        logits = nn::add(tape, logits, bias);

        Tensor per_anchor = nn::sub(tape, nn::logsumexp_rows(tape, logits),
                                    nn::take_diag(tape, logits));
        std::vector<double> w(static_cast<std::size_t>(n), 0.0);
        for (int k : anchors) w[static_cast<std::size_t>(k)] = 1.0 / static_cast<double>(anchors.size());
        Tensor li = nn::dot(tape, per_anchor, Tensor::from({n}, w));

        res.per_modality[i] = li.value();
        res.anchor_total += static_cast<int>(anchors.size());
        total = (used_modalities == 0) ? li : nn::add(tape, total, li);
        ++used_modalities;
    }
    if (used_modalities == 0) return std::nullopt;
    res.loss = nn::scale(tape, total, 1.0 / static_cast<double>(used_modalities));
    return res;
}

double tau_value(const nn::ParamStore& loss_params) {
    const nn::Param* p = loss_params.find("log_tau");
    if (!p) throw ConfigError("loss params missing log_tau");
    return std::exp(p->tensor.data()[0]);
}

namespace {

struct BatchEval {
    double loss_sum = 0.0;
    int batches = 0;
    std::vector<double> mod_sum;
    std::vector<int> mod_count;
};

void accumulate(BatchEval& ev, const InfoNceResult& r, int m) {
    if (ev.mod_sum.empty()) {
        ev.mod_sum.assign(static_cast<std::size_t>(m), 0.0);
        ev.mod_count.assign(static_cast<std::size_t>(m), 0);
    }
    ev.loss_sum += r.loss.value();
    ++ev.batches;
    for (const auto& [i, li] : r.per_modality) {
        ev.mod_sum[static_cast<std::size_t>(i)] += li;
        ++ev.mod_count[static_cast<std::size_t>(i)];
    }
}

}  // namespace

PretrainResult pretrain(const std::vector<cohort::ModalityRecord>& records,
                        const std::vector<cohort::ModalitySpec>& modalities,
                        const split::CohortSplit& split, const PretrainConfig& config) {
    PretrainResult out;

    encoder::EncoderBankConfig bank_cfg;
    bank_cfg.modalities = modalities;
    bank_cfg.latent_dim = config.latent_dim;
    bank_cfg.hidden_dim = config.hidden_dim;
    bank_cfg.mlp_dropout = config.mlp_dropout;
    bank_cfg.init_seed = config.seed;
    out.bank = std::make_unique<encoder::EncoderBank>(bank_cfg);

    Tensor& log_tau = out.loss_params.create("log_tau", {1});
    log_tau.data()[0] = std::log(config.tau_init);

    auto train_table = encoder::build_pretrain_table(
        records, modalities, split::stays_in_fold(split, split::Fold::Train));
    auto val_table = encoder::build_pretrain_table(records, modalities,
                                                   split::stays_in_fold(split, split::Fold::Val));
    if (train_table.stay_ids.empty() || val_table.stay_ids.empty())
        throw DataError("pretrain: empty train or val fold");

    nn::Adam opt({&out.bank->params(), &out.loss_params},
                 {.lr = config.lr, .weight_decay = config.weight_decay});

    int m = static_cast<int>(modalities.size());
    int n_train = static_cast<int>(train_table.stay_ids.size());
    Rng rng(config.seed ^ 0x5eedf00dULL);

    auto slice_batch = [&](const encoder::PretrainTable& table, const std::vector<int>& rows) {
        std::pair<std::vector<Tensor>, PresenceMask> out_pair;
        out_pair.second = PresenceMask(m, static_cast<int>(rows.size()));
        for (int i = 0; i < m; ++i) {
            Tape tmp(false);
            out_pair.first.push_back(
                nn::gather_rows(tmp, table.features[static_cast<std::size_t>(i)], rows));
            for (std::size_t r = 0; r < rows.size(); ++r)
                out_pair.second.set(i, static_cast<int>(r),
                                    table.mask.at(i, rows[r]) != 0);
        }
        return out_pair;
    };

    auto eval_loss = [&](const encoder::PretrainTable& table) {
        BatchEval ev;
        int n = static_cast<int>(table.stay_ids.size());
        for (int start = 0; start < n; start += config.batch_size) {
            int end = std::min(n, start + config.batch_size);
            if (end - start < 2) break;
            std::vector<int> rows;
            for (int r = start; r < end; ++r) rows.push_back(r);
            auto [feats, bmask] = slice_batch(table, rows);
            Tape tape(false);
            auto z = out.bank->encode_all(tape, feats, bmask, false, nullptr);
            auto r = masked_infonce(tape, z, bmask, log_tau);
            if (r) accumulate(ev, *r, m);
        }
        if (ev.batches == 0) throw DataError("pretrain: no evaluable batch in fold");
        return ev;
    };

    std::vector<std::vector<double>> best_params;
    auto snapshot = [&]() {
        best_params.clear();
        for (const auto& p : out.bank->params().all()) best_params.push_back(p.tensor.to_vector());
        best_params.push_back(log_tau.to_vector());
    };
    auto restore = [&]() {
        std::size_t i = 0;
        for (auto& p : out.bank->params().all()) {
            std::copy(best_params[i].begin(), best_params[i].end(), p.tensor.data());
            ++i;
        }
        std::copy(best_params[i].begin(), best_params[i].end(), log_tau.data());
    };

    double log_tau_min = std::log(config.tau_min), log_tau_max = std::log(config.tau_max);
    int since_best = 0;
    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        std::vector<int> order(static_cast<std::size_t>(n_train));
        for (int i = 0; i < n_train; ++i) order[static_cast<std::size_t>(i)] = i;
        rng.shuffle(order);

        BatchEval train_ev;
        for (int start = 0; start < n_train; start += config.batch_size) {
            int end = std::min(n_train, start + config.batch_size);
            if (end - start < 2) break;  // final short batch kept only with >= 2 patients
            std::vector<int> rows(order.begin() + start, order.begin() + end);
            auto [feats, bmask] = slice_batch(train_table, rows);
            PresenceMask routed = apply_modality_dropout(bmask, config.modality_dropout, rng);
            Rng mlp_rng = rng.fork(0xd0 + static_cast<std::uint64_t>(start));
            Tape tape(true);
            auto z = out.bank->encode_all(tape, feats, routed, true, &mlp_rng);
            auto r = masked_infonce(tape, z, routed, log_tau);
            if (!r) continue;
            if (!std::isfinite(r->loss.value()))
                throw NumericError("pretrain: non-finite loss at epoch " + std::to_string(epoch));
            accumulate(train_ev, *r, m);
            opt.zero_grad();
            tape.backward(r->loss);
            opt.step();
            log_tau.data()[0] = std::clamp(log_tau.data()[0], log_tau_min, log_tau_max);
        }
        if (train_ev.batches == 0) throw DataError("pretrain: every training batch was skipped");

        BatchEval val_ev = eval_loss(val_table);
        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = train_ev.loss_sum / train_ev.batches;
        entry.val_loss = val_ev.loss_sum / val_ev.batches;
        entry.tau = std::exp(log_tau.data()[0]);
        for (int i = 0; i < m; ++i) {
            entry.per_modality.push_back(
                train_ev.mod_count[static_cast<std::size_t>(i)] > 0
                    ? train_ev.mod_sum[static_cast<std::size_t>(i)] /
                          train_ev.mod_count[static_cast<std::size_t>(i)]
                    : -1.0);
        }
        out.log.push_back(entry);

        if (out.best_epoch < 0 || entry.val_loss < out.best_val) {
            out.best_epoch = epoch;
            out.best_val = entry.val_loss;
            snapshot();
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    restore();
    return out;
}

void write_pretrain_log_csv(const std::string& path, const std::vector<EpochLog>& log,
                            const std::vector<cohort::ModalitySpec>& modalities) {
    CsvWriter w(path);
    std::vector<std::string> header = {"epoch", "train_loss", "val_loss", "tau"};
    for (const auto& spec : modalities) header.push_back("loss_" + spec.name);
    w.row(header);
    for (const auto& e : log) {
        std::vector<std::string> row = {std::to_string(e.epoch), fmt_double(e.train_loss),
                                        fmt_double(e.val_loss), fmt_double(e.tau)};
        for (double v : e.per_modality) row.push_back(fmt_double(v));
        w.row(row);
    }
}

}  // namespace mga::contrastive
