#include "mga/latent_eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mga/csv.hpp"
#include "mga/errors.hpp"

namespace mga::latent_eval {

namespace {

using encoder::LatentEmbedding;
using encoder::Source;

bool usable(const LatentEmbedding& e, bool include_missing_tokens) {
    return include_missing_tokens || e.source == Source::Encoded;
}

// stay -> embedding of one modality, in stable stay order
std::vector<std::pair<std::string, const LatentEmbedding*>> collect(
    const std::vector<LatentEmbedding>& embeddings, int modality, bool include_missing) {
    std::vector<std::pair<std::string, const LatentEmbedding*>> out;
    for (const auto& e : embeddings)
        if (e.modality == modality && usable(e, include_missing)) out.emplace_back(e.stay_id, &e);
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

// the candidate pool is every target-modality embedding in the set
int retrieval_pool_size(const std::vector<LatentEmbedding>& embeddings, int query_mod,
                        int target_mod, bool include_missing_tokens) {
    (void)query_mod;
    return static_cast<int>(collect(embeddings, target_mod, include_missing_tokens).size());
}

int eligible_query_count(const std::vector<LatentEmbedding>& embeddings, int query_mod,
                         int target_mod, bool include_missing_tokens) {
    auto queries = collect(embeddings, query_mod, include_missing_tokens);
    auto targets = collect(embeddings, target_mod, include_missing_tokens);
    std::set<std::string> target_stays;
    for (const auto& [stay, e] : targets) target_stays.insert(stay);
    int n = 0;
    for (const auto& [stay, e] : queries) n += target_stays.count(stay) ? 1 : 0;
    return n;
}

double recall_at_k(const std::vector<LatentEmbedding>& embeddings, int query_mod, int target_mod,
                   int k, bool include_missing_tokens) {
    if (k < 1) throw ConfigError("recall_at_k: k must be >= 1");
    auto queries = collect(embeddings, query_mod, include_missing_tokens);
    auto targets = collect(embeddings, target_mod, include_missing_tokens);
    std::map<std::string, const LatentEmbedding*> target_by_stay;
    for (const auto& [stay, e] : targets) target_by_stay[stay] = e;

    // eligible queries belong to patients who also hold the target modality;
    // candidates are all target-modality embeddings
    std::vector<std::pair<std::string, const LatentEmbedding*>> eligible;
    for (const auto& [stay, e] : queries)
        if (target_by_stay.count(stay)) eligible.emplace_back(stay, e);
    if (eligible.size() < 2)
        throw DataError("recall_at_k: fewer than 2 patients hold both modalities");

    int hits = 0;
    for (const auto& [stay, query] : eligible) {
        double own_sim = cosine(query->vector, target_by_stay.at(stay)->vector);
        // rank of own target among all candidates; earlier stable order wins ties
        int rank = 1;
        for (const auto& [cand_stay, cand] : targets) {
            if (cand_stay == stay) continue;
            double sim = cosine(query->vector, cand->vector);
            if (sim > own_sim || (sim == own_sim && cand_stay < stay)) ++rank;
        }
        if (rank <= k) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(eligible.size());
}

SilhouetteResult silhouette(const std::vector<std::vector<double>>& points,
                            const std::vector<int>& labels) {
    if (points.size() != labels.size()) throw ShapeError("silhouette: points/labels mismatch");
    std::set<int> distinct(labels.begin(), labels.end());
    if (distinct.size() < 2) throw DataError("silhouette: need at least two labels");
    std::size_t n = points.size();

    std::map<int, int> cluster_size;
    for (int l : labels) ++cluster_size[l];

    SilhouetteResult res;
    std::map<int, double> label_sum;
    for (std::size_t i = 0; i < n; ++i) {
        double a_sum = 0.0;
        std::map<int, double> other_sum;
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            double d = 1.0 - cosine(points[i], points[j]);
            if (labels[j] == labels[i]) {
                a_sum += d;
            } else {
                other_sum[labels[j]] += d;
            }
        }
        double s = 0.0;
        if (cluster_size[labels[i]] > 1) {
            double a = a_sum / (cluster_size[labels[i]] - 1);
            double b = std::numeric_limits<double>::infinity();
            for (const auto& [lab, sum] : other_sum) b = std::min(b, sum / cluster_size[lab]);
            double mx = std::max(a, b);
            s = mx > 0.0 ? (b - a) / mx : 0.0;
        }
        // singleton clusters score 0 by convention
        res.overall += s;
        label_sum[labels[i]] += s;
    }
    res.overall /= static_cast<double>(n);
    for (const auto& [lab, sum] : label_sum) res.per_label[lab] = sum / cluster_size[lab];
    return res;
}

SilhouetteResult modality_silhouette(const std::vector<LatentEmbedding>& embeddings,
                                     bool include_missing_tokens) {
    std::vector<std::vector<double>> points;
    std::vector<int> labels;
    for (const auto& e : embeddings) {
        if (!usable(e, include_missing_tokens)) continue;
        points.push_back(e.vector);
        labels.push_back(e.modality);
    }
    return silhouette(points, labels);
}

std::vector<RetrievalRow> retrieval_report(const std::vector<LatentEmbedding>& embeddings,
                                           int n_modalities, const std::vector<int>& ks,
                                           bool include_missing_tokens) {
    std::vector<RetrievalRow> rows;
    for (int q = 0; q < n_modalities; ++q) {
        for (int t = 0; t < n_modalities; ++t) {
            if (q == t) continue;
            int pool = retrieval_pool_size(embeddings, q, t, include_missing_tokens);
            if (pool < 2) continue;
            if (eligible_query_count(embeddings, q, t, include_missing_tokens) < 2) continue;
            for (int k : ks) {
                RetrievalRow row;
                row.query_mod = q;
                row.target_mod = t;
                row.k = k;
                row.pool = pool;
                row.value = recall_at_k(embeddings, q, t, k, include_missing_tokens);
                rows.push_back(row);
            }
        }
    }
    return rows;
}

void write_retrieval_csv(const std::string& path, const std::vector<RetrievalRow>& rows,
                         const std::vector<cohort::ModalitySpec>& modalities) {
    CsvWriter w(path);
    w.row({"metric", "query_mod", "target_mod", "k", "value", "pool"});
    for (const auto& r : rows) {
        w.row({"recall_at_k", modalities[static_cast<std::size_t>(r.query_mod)].name,
               modalities[static_cast<std::size_t>(r.target_mod)].name, std::to_string(r.k),
               fmt_double(r.value), std::to_string(r.pool)});
    }
}

void write_silhouette_csv(const std::string& path, const SilhouetteResult& result,
                          const std::vector<cohort::ModalitySpec>& modalities) {
    CsvWriter w(path);
    w.row({"silhouette", "label", "value"});
    w.row({"silhouette", "overall", fmt_double(result.overall)});
    for (const auto& [label, value] : result.per_label)
        w.row({"silhouette", modalities[static_cast<std::size_t>(label)].name, fmt_double(value)});
}

void write_embeddings_csv(const std::string& path,
                          const std::vector<LatentEmbedding>& embeddings,
                          const std::vector<cohort::ModalitySpec>& modalities) {
    CsvWriter w(path);
    std::size_t d = embeddings.empty() ? 0 : embeddings.front().vector.size();
    std::vector<std::string> header = {"stay_id", "modality", "source"};
    for (std::size_t j = 0; j < d; ++j) header.push_back("v_" + std::to_string(j));
    w.row(header);
    for (const auto& e : embeddings) {
        std::vector<std::string> row = {e.stay_id,
                                        modalities[static_cast<std::size_t>(e.modality)].name,
                                        encoder::source_name(e.source)};
        for (double v : e.vector) row.push_back(fmt_double(v));
        w.row(row);
    }
}

}  // namespace mga::latent_eval
