#include "mga/task_eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mga/errors.hpp"

namespace mga::task_eval {

namespace {

void check_sizes(const std::vector<double>& scores, const std::vector<int>& labels,
                 const char* who) {
    if (scores.size() != labels.size())
        throw DataError(std::string(who) + ": scores/labels size mismatch");
    if (scores.empty()) throw DataError(std::string(who) + ": empty input");
}

}  // namespace

std::vector<double> average_ranks(const std::vector<double>& values) {
    std::size_t n = values.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[idx[j + 1]] == values[idx[i]]) ++j;
        double mean_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_sizes(scores, labels, "auroc");
    std::size_t n_pos = 0, n_neg = 0;
    for (int y : labels) (y ? ++n_pos : ++n_neg);
    if (n_pos == 0 || n_neg == 0)
        throw DataError("auroc: undefined, only one class present");
    // rank formulation; with average ranks this equals the pair count with
    // half-credit for ties
    std::vector<double> ranks = average_ranks(scores);
    double rank_sum_pos = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i]) rank_sum_pos += ranks[i];
    double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

double auprc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_sizes(scores, labels, "auprc");
    std::size_t n_pos = 0;
    for (int y : labels) n_pos += (y != 0);
    if (n_pos == 0) throw DataError("auprc: undefined, no positives");

    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double ap = 0.0;
    double tp = 0.0, fp = 0.0;
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        double block_tp = 0.0, block_fp = 0.0;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            (labels[idx[j]] ? block_tp : block_fp) += 1.0;
            ++j;
        }
        double prev_recall = tp / static_cast<double>(n_pos);
        tp += block_tp;
        fp += block_fp;
        double recall = tp / static_cast<double>(n_pos);
        double precision = tp / (tp + fp);
        ap += (recall - prev_recall) * precision;
        i = j;
    }
    return ap;
}

namespace {

double macro_metric(const std::vector<std::vector<double>>& scores_per_class,
                    const std::vector<std::vector<int>>& labels_per_class,
                    int* skipped_classes, bool use_auroc) {
    if (scores_per_class.size() != labels_per_class.size())
        throw DataError("macro metric: class count mismatch");
    double sum = 0.0;
    int used = 0, skipped = 0;
    for (std::size_t c = 0; c < scores_per_class.size(); ++c) {
        const auto& labels = labels_per_class[c];
        std::size_t n_pos = 0, n_neg = 0;
        for (int y : labels) (y ? ++n_pos : ++n_neg);
        bool computable = use_auroc ? (n_pos > 0 && n_neg > 0) : (n_pos > 0);
        if (!computable) {
            ++skipped;
            continue;
        }
        sum += use_auroc ? auroc(scores_per_class[c], labels)
                         : auprc(scores_per_class[c], labels);
        ++used;
    }
    if (skipped_classes) *skipped_classes = skipped;
    if (used == 0) throw DataError("macro metric: no computable class");
    return sum / used;
}

}  // namespace

double macro_auprc(const std::vector<std::vector<double>>& scores_per_class,
                   const std::vector<std::vector<int>>& labels_per_class,
                   int* skipped_classes) {
    return macro_metric(scores_per_class, labels_per_class, skipped_classes, false);
}

double macro_auroc(const std::vector<std::vector<double>>& scores_per_class,
                   const std::vector<std::vector<int>>& labels_per_class,
                   int* skipped_classes) {
    return macro_metric(scores_per_class, labels_per_class, skipped_classes, true);
}

RegressionMetrics regression_suite(const std::vector<double>& pred_hours,
                                   const std::vector<double>& true_hours) {
    if (pred_hours.size() != true_hours.size())
        throw DataError("regression_suite: size mismatch");
    if (pred_hours.size() < 3) throw DataError("regression_suite: need n >= 3");
    std::size_t n = pred_hours.size();
    RegressionMetrics m;
    for (std::size_t i = 0; i < n; ++i) {
        double d = pred_hours[i] - true_hours[i];
        m.mse += d * d;
        m.mae += std::abs(d);
    }
    m.mse /= static_cast<double>(n);
    m.mae /= static_cast<double>(n);

    auto pearson_of = [&](const std::vector<double>& a, const std::vector<double>& b,
                          bool& ok) -> double {
        double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
        double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
        double sab = 0.0, saa = 0.0, sbb = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            sab += (a[i] - ma) * (b[i] - mb);
            saa += (a[i] - ma) * (a[i] - ma);
            sbb += (b[i] - mb) * (b[i] - mb);
        }
        if (saa == 0.0 || sbb == 0.0) {
            ok = false;
            return 0.0;
        }
        ok = true;
        return sab / std::sqrt(saa * sbb);
    };
    bool ok1 = false, ok2 = false;
    m.pearson = pearson_of(pred_hours, true_hours, ok1);
    m.spearman = pearson_of(average_ranks(pred_hours), average_ranks(true_hours), ok2);
    m.correlation_defined = ok1 && ok2;
    return m;
}

double ace(const std::vector<double>& probs, const std::vector<int>& labels, int n_bins,
           bool* reduced_bins) {
    check_sizes(probs, labels, "ace");
    for (double p : probs)
        if (!(p >= 0.0 && p <= 1.0)) throw DataError("ace: probability outside [0,1]");
    if (n_bins <= 0) throw ConfigError("ace: n_bins must be positive");
    int n = static_cast<int>(probs.size());
    if (reduced_bins) *reduced_bins = false;
    if (n < n_bins) {
        n_bins = n;
        if (reduced_bins) *reduced_bins = true;
    }
    std::vector<std::size_t> idx(probs.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return probs[a] < probs[b]; });
    // equal-count bins: the first (n % n_bins) bins take one extra element
    int base = n / n_bins, extra = n % n_bins;
    double total = 0.0;
    std::size_t cursor = 0;
    for (int b = 0; b < n_bins; ++b) {
        int count = base + (b < extra ? 1 : 0);
        double conf = 0.0, acc = 0.0;
        for (int c = 0; c < count; ++c) {
            conf += probs[idx[cursor]];
            acc += labels[idx[cursor]];
            ++cursor;
        }
        total += std::abs(conf / count - acc / count);
    }
    return total / n_bins;
}

double bss(const std::vector<double>& probs, const std::vector<int>& labels) {
    check_sizes(probs, labels, "bss");
    double prevalence = 0.0;
    for (int y : labels) prevalence += y;
    prevalence /= static_cast<double>(labels.size());
    if (prevalence == 0.0 || prevalence == 1.0)
        throw DataError("bss: baseline Brier score is zero (single class)");
    double brier = 0.0, brier_ref = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        brier += (probs[i] - labels[i]) * (probs[i] - labels[i]);
        brier_ref += (prevalence - labels[i]) * (prevalence - labels[i]);
    }
    return 1.0 - brier / brier_ref;
}

}  // namespace mga::task_eval
