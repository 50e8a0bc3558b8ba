#pragma once

#include <map>
#include <string>
#include <vector>

namespace mga::task_eval {

// Mann-Whitney AUROC: P(score+ > score-) + 0.5 P(tie). Throws DataError when
// a class is missing.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// Average precision with step-wise interpolation; tied scores collapse into
// one threshold block. Throws DataError when there are no positives.
double auprc(const std::vector<double>& scores, const std::vector<int>& labels);

// Macro average over classes; classes absent from labels are skipped and
// counted in skipped_classes when provided.
double macro_auprc(const std::vector<std::vector<double>>& scores_per_class,
                   const std::vector<std::vector<int>>& labels_per_class,
                   int* skipped_classes = nullptr);
double macro_auroc(const std::vector<std::vector<double>>& scores_per_class,
                   const std::vector<std::vector<int>>& labels_per_class,
                   int* skipped_classes = nullptr);

struct RegressionMetrics {
    double mse = 0.0;
    double mae = 0.0;
    double pearson = 0.0;
    double spearman = 0.0;
    bool correlation_defined = true;  // false when either side has zero variance
};

// pred_hours/true_hours on the hour scale (callers back-transform log1p
// predictions via expm1 first). Spearman uses average ranks for ties.
RegressionMetrics regression_suite(const std::vector<double>& pred_hours,
                                   const std::vector<double>& true_hours);

// Adaptive (equal-count) calibration error over n_bins; when n < n_bins the
// bin count is reduced to n (warning via the optional out-param).
double ace(const std::vector<double>& probs, const std::vector<int>& labels, int n_bins = 10,
           bool* reduced_bins = nullptr);

// Brier skill score vs the constant-prevalence predictor.
double bss(const std::vector<double>& probs, const std::vector<int>& labels);

// average ranks (1-based) with ties sharing their mean rank
std::vector<double> average_ranks(const std::vector<double>& values);

}  // namespace mga::task_eval
