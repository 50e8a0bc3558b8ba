#include "mga/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "mga/csv.hpp"
#include "mga/errors.hpp"
#include "mga/optim.hpp"

namespace mga::decoder {

using nn::Tape;
using nn::Tensor;
using timeline::EventTimeline;

std::string task_name(Task t) {
    switch (t) {
        case Task::Mortality: return "mortality";
        case Task::Phenotyping: return "phenotyping";
        case Task::Los: return "los";
    }
    return "?";
}

Task task_from_name(const std::string& name) {
    if (name == "mortality") return Task::Mortality;
    if (name == "phenotyping") return Task::Phenotyping;
    if (name == "los") return Task::Los;
    throw ConfigError("unknown task: " + name);
}

SeqDecoder::SeqDecoder(DecoderConfig cfg) : cfg_(cfg) {
    if (cfg_.d_model % cfg_.heads != 0)
        throw ConfigError("decoder: d_model " + std::to_string(cfg_.d_model) +
                          " not divisible by heads " + std::to_string(cfg_.heads));
    if (cfg_.layers < 1 || cfg_.d_model < 2 || cfg_.ffn_mult < 1)
        throw ConfigError("decoder: degenerate architecture");
    Rng rng(cfg_.init_seed);
    nn::init_normal(params_.create("predict_token", {cfg_.latent_dim}), rng,
                    1.0 / std::sqrt(static_cast<double>(cfg_.latent_dim)));
    nn::init_xavier(params_.create("proj.w", {cfg_.latent_dim + 1, cfg_.d_model}, true), rng);
    params_.create("proj.b", {cfg_.d_model});
    for (int l = 0; l < cfg_.layers; ++l) {
        std::string p = "layer" + std::to_string(l) + ".";
        for (const char* ln : {"ln1", "ln2"}) {
            Tensor& g = params_.create(p + ln + ".g", {cfg_.d_model});
            std::fill(g.data(), g.data() + g.size(), 1.0);
            params_.create(p + ln + ".b", {cfg_.d_model});
        }
        for (const char* w : {"wq", "wk", "wv", "wo"})
            nn::init_xavier(params_.create(p + w, {cfg_.d_model, cfg_.d_model}, true), rng);
        for (const char* b : {"bq", "bk", "bv", "bo"}) params_.create(p + b, {cfg_.d_model});
        nn::init_xavier(
            params_.create(p + "ffn.w1", {cfg_.d_model, cfg_.d_model * cfg_.ffn_mult}, true),
            rng);
        params_.create(p + "ffn.b1", {cfg_.d_model * cfg_.ffn_mult});
        nn::init_xavier(
            params_.create(p + "ffn.w2", {cfg_.d_model * cfg_.ffn_mult, cfg_.d_model}, true),
            rng);
        params_.create(p + "ffn.b2", {cfg_.d_model});
    }
    Tensor& gf = params_.create("ln_final.g", {cfg_.d_model});
    std::fill(gf.data(), gf.data() + gf.size(), 1.0);
    params_.create("ln_final.b", {cfg_.d_model});
    nn::init_xavier(params_.create("head.w", {cfg_.d_model, out_dim()}, true), rng);
    params_.create("head.b", {out_dim()});
}

int SeqDecoder::out_dim() const {
    return cfg_.task == Task::Phenotyping ? cohort::kPhenotypeCount : 1;
}

ForwardResult SeqDecoder::forward(Tape& tape, const EventTimeline& timeline,
                                  encoder::EncoderBank* bank, bool train, Rng* rng) {
    int n_events = static_cast<int>(timeline.events.size());
    if (n_events == 0) throw DataError("decoder: empty timeline " + timeline.stay_id);
    int t = 2 * n_events;
    if (t > cfg_.max_seq)
        throw DataError("decoder: sequence length " + std::to_string(t) + " over max " +
                        std::to_string(cfg_.max_seq) + " (caller truncates)");

    // event embeddings: cached rows become one constant matrix, the rest are
    // encoded per modality and scattered into place
    Tensor events({n_events, cfg_.latent_dim});
    std::map<int, std::vector<int>> encode_rows;  // modality -> event row
    for (int e = 0; e < n_events; ++e) {
        const auto& ev = timeline.events[static_cast<std::size_t>(e)];
        if (ev.embedding.empty()) {
            encode_rows[ev.modality].push_back(e);
        } else {
            if (static_cast<int>(ev.embedding.size()) != cfg_.latent_dim)
                throw ShapeError("decoder: cached embedding width mismatch");
            for (int j = 0; j < cfg_.latent_dim; ++j)
                events.at(e, j) = ev.embedding[static_cast<std::size_t>(j)];
        }
    }
    Tensor event_matrix = events;
    if (!encode_rows.empty()) {
        if (!bank) throw ConfigError("decoder: events lack embeddings and no bank was given");
        bool bank_train = train && !bank->frozen();
        for (const auto& [modality, rows] : encode_rows) {
            int dim = bank->config().modalities[static_cast<std::size_t>(modality)].feature_dim;
            Tensor feats({static_cast<int>(rows.size()), dim});
            for (std::size_t r = 0; r < rows.size(); ++r) {
                const auto& ev = timeline.events[static_cast<std::size_t>(rows[r])];
                if (static_cast<int>(ev.features.size()) != dim)
                    throw ShapeError("decoder: event feature width mismatch");
                for (int j = 0; j < dim; ++j)
                    feats.at(static_cast<int>(r), j) = ev.features[static_cast<std::size_t>(j)];
            }
            Tensor z = bank->encode_events(tape, modality, feats, bank_train,
                                           bank_train ? rng : nullptr);
            event_matrix = nn::add(tape, event_matrix, nn::scatter_rows(tape, z, rows, n_events));
        }
    }

    std::vector<int> event_pos(static_cast<std::size_t>(n_events)),
        slot_pos(static_cast<std::size_t>(n_events));
    for (int e = 0; e < n_events; ++e) {
        event_pos[static_cast<std::size_t>(e)] = 2 * e;
        slot_pos[static_cast<std::size_t>(e)] = 2 * e + 1;
    }
    Tensor tokens =
        nn::broadcast_row(tape, params_.tensor("predict_token"), n_events);
    Tensor x = nn::add(tape, nn::scatter_rows(tape, event_matrix, event_pos, t),
                       nn::scatter_rows(tape, tokens, slot_pos, t));

    // a PREDICT slot shares its event's wall-clock offset
    Tensor offsets({t, 1});
    for (int e = 0; e < n_events; ++e) {
        double v = cohort::sign_log_scale(timeline.events[static_cast<std::size_t>(e)].offset_minutes);
        offsets.at(2 * e, 0) = v;
        offsets.at(2 * e + 1, 0) = v;
    }
    Tensor h = nn::dense(tape, nn::concat_cols(tape, x, offsets), params_.tensor("proj.w"),
                         params_.tensor("proj.b"));
    h = nn::add(tape, h, nn::sinusoidal_positions(t, cfg_.d_model));

    auto maybe_dropout = [&](Tensor v) {
        if (!train || cfg_.dropout <= 0.0) return v;
        if (!rng) throw ConfigError("decoder: train mode needs an rng");
        double keep = 1.0 - cfg_.dropout;
        std::vector<double> mask(v.size());
        for (auto& m : mask) m = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
        return nn::dropout(tape, v, mask);
    };

    ForwardResult res;
    res.seq_len = t;
    res.predict_positions = slot_pos;
    int dh = cfg_.d_model / cfg_.heads;
    for (int l = 0; l < cfg_.layers; ++l) {
        std::string p = "layer" + std::to_string(l) + ".";
        Tensor a = nn::layer_norm(tape, h, params_.tensor(p + "ln1.g"),
                                  params_.tensor(p + "ln1.b"), 1e-5);
        Tensor q = nn::dense(tape, a, params_.tensor(p + "wq"), params_.tensor(p + "bq"));
        Tensor k = nn::dense(tape, a, params_.tensor(p + "wk"), params_.tensor(p + "bk"));
        Tensor v = nn::dense(tape, a, params_.tensor(p + "wv"), params_.tensor(p + "bv"));
        Tensor ctx;
        std::vector<std::vector<double>> layer_attn;
        for (int hd = 0; hd < cfg_.heads; ++hd) {
            Tensor qh = nn::slice_cols(tape, q, hd * dh, dh);
            Tensor kh = nn::slice_cols(tape, k, hd * dh, dh);
            Tensor vh = nn::slice_cols(tape, v, hd * dh, dh);
            Tensor scores =
                nn::scale(tape, nn::matmul_nt(tape, qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
            Tensor attn = nn::causal_softmax(tape, scores);
            if (l == cfg_.layers - 1 || cfg_.keep_all_layer_attention)
                layer_attn.push_back(attn.to_vector());
            Tensor ctx_h = nn::matmul(tape, attn, vh);
            ctx = (hd == 0) ? ctx_h : nn::concat_cols(tape, ctx, ctx_h);
        }
        if (l == cfg_.layers - 1) {
            res.final_attention = std::move(layer_attn);
        } else if (cfg_.keep_all_layer_attention) {
            res.earlier_attention.push_back(std::move(layer_attn));
        }
        Tensor attn_out =
            nn::dense(tape, ctx, params_.tensor(p + "wo"), params_.tensor(p + "bo"));
        h = nn::add(tape, h, maybe_dropout(attn_out));

        Tensor b = nn::layer_norm(tape, h, params_.tensor(p + "ln2.g"),
                                  params_.tensor(p + "ln2.b"), 1e-5);
        Tensor ffn = nn::dense(tape, b, params_.tensor(p + "ffn.w1"), params_.tensor(p + "ffn.b1"));
        ffn = nn::relu(tape, ffn);
        ffn = nn::dense(tape, ffn, params_.tensor(p + "ffn.w2"), params_.tensor(p + "ffn.b2"));
        h = nn::add(tape, h, maybe_dropout(ffn));
    }
    Tensor hf = nn::layer_norm(tape, h, params_.tensor("ln_final.g"), params_.tensor("ln_final.b"),
                               1e-5);
    Tensor slots = nn::gather_rows(tape, hf, slot_pos);
    res.slot_logits = nn::dense(tape, slots, params_.tensor("head.w"), params_.tensor("head.b"));
    return res;
}

Tensor loss_mortality(Tape& tape, const Tensor& slot_logits, int label, double pos_weight) {
    if (label != 0 && label != 1) throw DataError("loss_mortality: label must be 0 or 1");
    if (slot_logits.cols() != 1)
        throw ShapeError("loss_mortality: expected [S,1] logits, got " + slot_logits.shape_str());
    Tensor pos_term = nn::softplus(tape, nn::scale(tape, slot_logits, -1.0));
    Tensor neg_term = nn::softplus(tape, slot_logits);
    Tensor combined = nn::add(tape, nn::scale(tape, pos_term, label * pos_weight),
                              nn::scale(tape, neg_term, 1.0 - label));
    return nn::mean_all(tape, combined);
}

Tensor loss_phenotyping(Tape& tape, const Tensor& slot_logits, const std::vector<int>& labels,
                        const std::vector<double>& pos_weights) {
    int s = slot_logits.rows();
    int c = slot_logits.cols();
    if (static_cast<int>(labels.size()) != c || static_cast<int>(pos_weights.size()) != c)
        throw ShapeError("loss_phenotyping: label/weight width mismatch");
    std::vector<double> wpos(static_cast<std::size_t>(s) * static_cast<std::size_t>(c));
    std::vector<double> wneg(wpos.size());
    for (int i = 0; i < s; ++i) {
        for (int j = 0; j < c; ++j) {
            int y = labels[static_cast<std::size_t>(j)];
            if (y != 0 && y != 1) throw DataError("loss_phenotyping: labels must be 0/1");
            wpos[static_cast<std::size_t>(i) * static_cast<std::size_t>(c) + static_cast<std::size_t>(j)] =
                y * pos_weights[static_cast<std::size_t>(j)];
            wneg[static_cast<std::size_t>(i) * static_cast<std::size_t>(c) + static_cast<std::size_t>(j)] =
                1.0 - y;
        }
    }
    Tensor pos_term = nn::mul(tape, nn::softplus(tape, nn::scale(tape, slot_logits, -1.0)),
                              Tensor::from({s, c}, wpos));
    Tensor neg_term = nn::mul(tape, nn::softplus(tape, slot_logits), Tensor::from({s, c}, wneg));
    // summed over classes, averaged over slots
    return nn::scale(tape, nn::sum_all(tape, nn::add(tape, pos_term, neg_term)),
                     1.0 / static_cast<double>(s));
}

Tensor loss_los(Tape& tape, const Tensor& slot_preds, double los_hours) {
    if (los_hours < cohort::kMinLosHours || los_hours > cohort::kMaxLosHours)
        throw DataError("loss_los: los_hours outside [12,720]");
    if (slot_preds.cols() != 1)
        throw ShapeError("loss_los: expected [S,1] predictions, got " + slot_preds.shape_str());
    double target = std::log1p(los_hours);
    return nn::mean_all(tape, nn::square(tape, nn::add_const(tape, slot_preds, -target)));
}

Tensor timeline_loss(Tape& tape, Task task, const Tensor& slot_logits,
                     const cohort::StayLabels& labels, double mort_pos_weight,
                     const std::vector<double>& pheno_pos_weights) {
    switch (task) {
        case Task::Mortality:
            return loss_mortality(tape, slot_logits, labels.mortality, mort_pos_weight);
        case Task::Phenotyping:
            return loss_phenotyping(tape, slot_logits, labels.phenotypes, pheno_pos_weights);
        case Task::Los:
            return loss_los(tape, slot_logits, labels.los_hours);
    }
    throw ConfigError("timeline_loss: bad task");
}

double mortality_pos_weight(const std::vector<int>& labels) {
    double pos = 0.0;
    for (int y : labels) pos += y;
    double neg = static_cast<double>(labels.size()) - pos;
    if (pos == 0.0)
        throw DataError("mortality_pos_weight: training split has zero positives");
    return neg / pos;
}

std::vector<double> phenotype_pos_weights(const std::vector<std::vector<int>>& labels_per_class,
                                          double cap, std::vector<int>* capped_classes) {
    std::vector<double> out;
    if (capped_classes) capped_classes->clear();
    for (std::size_t c = 0; c < labels_per_class.size(); ++c) {
        double pos = 0.0;
        for (int y : labels_per_class[c]) pos += y;
        double neg = static_cast<double>(labels_per_class[c].size()) - pos;
        double w = pos == 0.0 ? cap : std::min(cap, neg / pos);
        if (w == cap && capped_classes) capped_classes->push_back(static_cast<int>(c));
        out.push_back(w);
    }
    return out;
}

EventTimeline drop_timeline_modalities(const EventTimeline& tl, double p, Rng& rng) {
    if (p <= 0.0) return tl;
    auto mods = timeline::present_modalities(tl);
    std::set<int> dropped;
    for (int m : mods)
        if (rng.bernoulli(p)) dropped.insert(m);
    if (dropped.empty() || dropped.size() == mods.size()) return tl;
    EventTimeline out = tl;
    out.events.clear();
    for (const auto& e : tl.events)
        if (!dropped.count(e.modality)) out.events.push_back(e);
    return out;
}

Trajectory predict(SeqDecoder& dec, const EventTimeline& timeline, encoder::EncoderBank* bank) {
    Tape tape(false);
    ForwardResult fr = dec.forward(tape, timeline, bank, false, nullptr);
    Trajectory traj;
    bool classify = dec.config().task != Task::Los;
    int s = fr.slot_logits.rows();
    for (int i = 0; i < s; ++i) {
        std::vector<double> row;
        for (int j = 0; j < fr.slot_logits.cols(); ++j) {
            double v = fr.slot_logits.at(i, j);
            row.push_back(classify ? 1.0 / (1.0 + std::exp(-v)) : v);
        }
        traj.per_slot.push_back(std::move(row));
        traj.slot_offsets.push_back(timeline.events[static_cast<std::size_t>(i)].offset_minutes);
        traj.event_uids.push_back(timeline.events[static_cast<std::size_t>(i)].uid);
    }
    return traj;
}

void cache_embeddings(encoder::EncoderBank& bank, std::vector<timeline::EventTimeline>& timelines) {
    for (auto& tl : timelines) {
        std::map<int, std::vector<int>> rows;
        for (std::size_t e = 0; e < tl.events.size(); ++e)
            rows[tl.events[e].modality].push_back(static_cast<int>(e));
        for (const auto& [modality, idx] : rows) {
            int dim = bank.config().modalities[static_cast<std::size_t>(modality)].feature_dim;
            Tensor feats({static_cast<int>(idx.size()), dim});
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (int j = 0; j < dim; ++j)
                    feats.at(static_cast<int>(r), j) =
                        tl.events[static_cast<std::size_t>(idx[r])].features[static_cast<std::size_t>(j)];
            Tape tape(false);
            Tensor z = bank.encode_events(tape, modality, feats, false, nullptr);
            std::size_t d = static_cast<std::size_t>(z.cols());
            for (std::size_t r = 0; r < idx.size(); ++r) {
                auto& ev = tl.events[static_cast<std::size_t>(idx[r])];
                ev.embedding.assign(z.data() + r * d, z.data() + (r + 1) * d);
            }
        }
    }
}

namespace {

struct TaskWeights {
    double mort = 1.0;
    std::vector<double> pheno;
};

TaskWeights compute_weights(Task task, const std::vector<EventTimeline>& train) {
    TaskWeights w;
    if (task == Task::Mortality) {
        std::vector<int> labels;
        for (const auto& tl : train) labels.push_back(tl.labels.mortality);
        w.mort = mortality_pos_weight(labels);
    } else if (task == Task::Phenotyping) {
        std::vector<std::vector<int>> per_class(cohort::kPhenotypeCount);
        for (const auto& tl : train)
            for (int c = 0; c < cohort::kPhenotypeCount; ++c)
                per_class[static_cast<std::size_t>(c)].push_back(
                    tl.labels.phenotypes[static_cast<std::size_t>(c)]);
        w.pheno = phenotype_pos_weights(per_class);
    }
    return w;
}

}  // namespace

FinetuneResult finetune(encoder::EncoderBank& bank, std::vector<EventTimeline>& train,
                        std::vector<EventTimeline>& val, const FinetuneConfig& config) {
    if (train.empty() || val.empty()) throw DataError("finetune: empty train or val split");
    FinetuneResult out;
    out.decoder = std::make_unique<SeqDecoder>(config.decoder);
    if (bank.frozen()) {
        cache_embeddings(bank, train);
        cache_embeddings(bank, val);
    }
    TaskWeights weights = compute_weights(config.decoder.task, train);

    std::vector<nn::ParamStore*> stores = {&out.decoder->params()};
    if (!bank.frozen()) stores.push_back(&bank.params());
    nn::Adam opt(stores, {.lr = config.lr, .weight_decay = config.weight_decay});

    Rng rng(config.seed ^ 0xf17e7a9eULL);
    int n_train = static_cast<int>(train.size());

    auto stay_loss = [&](Tape& tape, const EventTimeline& tl, bool is_train, Rng* drop_rng) {
        ForwardResult fr = out.decoder->forward(tape, tl, &bank, is_train, drop_rng);
        return timeline_loss(tape, config.decoder.task, fr.slot_logits, tl.labels, weights.mort,
                             weights.pheno);
    };

    auto eval_loss = [&](std::vector<EventTimeline>& fold) {
        double sum = 0.0;
        for (auto& tl : fold) {
            Tape tape(false);
            sum += stay_loss(tape, tl, false, nullptr).value();
        }
        return sum / static_cast<double>(fold.size());
    };

    auto snapshot_params = [&]() {
        std::vector<std::vector<double>> snap;
        for (nn::ParamStore* s : stores)
            for (const auto& p : s->all()) snap.push_back(p.tensor.to_vector());
        return snap;
    };
    auto restore_params = [&](const std::vector<std::vector<double>>& snap) {
        std::size_t i = 0;
        for (nn::ParamStore* s : stores)
            for (auto& p : s->all()) std::copy(snap[i].begin(), snap[i].end(), p.tensor.data()), ++i;
    };

    std::vector<std::vector<double>> best = snapshot_params();
    std::vector<std::vector<double>> last_finite = best;
    int since_best = 0;
    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        std::vector<int> order(static_cast<std::size_t>(n_train));
        for (int i = 0; i < n_train; ++i) order[static_cast<std::size_t>(i)] = i;
        rng.shuffle(order);

        double train_sum = 0.0;
        int train_count = 0;
        for (int start = 0; start < n_train; start += config.batch_size) {
            int end = std::min(n_train, start + config.batch_size);
            Tape tape(true);
            Tensor batch_loss;
            int in_batch = 0;
            for (int bi = start; bi < end; ++bi) {
                EventTimeline tl = drop_timeline_modalities(
                    train[static_cast<std::size_t>(order[static_cast<std::size_t>(bi)])],
                    config.modality_dropout, rng);
                Rng drop_rng = rng.fork(static_cast<std::uint64_t>(epoch) * 65537 +
                                        static_cast<std::uint64_t>(bi));
                Tensor li = stay_loss(tape, tl, true, &drop_rng);
                batch_loss = (in_batch == 0) ? li : nn::add(tape, batch_loss, li);
                ++in_batch;
            }
            Tensor loss = nn::scale(tape, batch_loss, 1.0 / static_cast<double>(in_batch));
            if (!std::isfinite(loss.value())) {
                // halt with the last parameters that produced a finite loss
                restore_params(last_finite);
                out.halted_non_finite = true;
                return out;
            }
            last_finite = snapshot_params();
            train_sum += loss.value() * in_batch;
            train_count += in_batch;
            opt.zero_grad();
            tape.backward(loss);
            opt.step();
        }

        FinetuneEpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = train_sum / train_count;
        entry.val_loss = eval_loss(val);
        out.log.push_back(entry);
        if (out.best_epoch < 0 || entry.val_loss < out.best_val) {
            out.best_epoch = epoch;
            out.best_val = entry.val_loss;
            best = snapshot_params();
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    restore_params(best);
    return out;
}

void write_finetune_log_csv(const std::string& path, const std::vector<FinetuneEpochLog>& log) {
    CsvWriter w(path);
    w.row({"epoch", "train_loss", "val_loss"});
    for (const auto& e : log)
        w.row({std::to_string(e.epoch), fmt_double(e.train_loss), fmt_double(e.val_loss)});
}

void write_trajectories_csv(const std::string& path, const std::vector<std::string>& stay_ids,
                            const std::vector<Trajectory>& trajectories, Task task) {
    CsvWriter w(path);
    if (task == Task::Phenotyping) {
        w.row({"stay_id", "slot_index", "offset_minutes", "prediction", "class_id"});
    } else {
        w.row({"stay_id", "slot_index", "offset_minutes", "prediction"});
    }
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        const auto& traj = trajectories[i];
        for (std::size_t s = 0; s < traj.per_slot.size(); ++s) {
            if (task == Task::Phenotyping) {
                for (std::size_t c = 0; c < traj.per_slot[s].size(); ++c)
                    w.row({stay_ids[i], std::to_string(s), fmt_double(traj.slot_offsets[s]),
                           fmt_double(traj.per_slot[s][c]), std::to_string(c)});
            } else {
                w.row({stay_ids[i], std::to_string(s), fmt_double(traj.slot_offsets[s]),
                       fmt_double(traj.per_slot[s][0])});
            }
        }
    }
}

}  // namespace mga::decoder
