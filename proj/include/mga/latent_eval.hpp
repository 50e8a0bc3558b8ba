#pragma once

#include <map>
#include <string>
#include <vector>

#include "mga/encoder.hpp"

namespace mga::latent_eval {

// Cross-modal retrieval. For each patient holding both modalities with
// ENCODED source, rank all target-modality candidates by cosine similarity to
// the query embedding; a hit means the patient's own target ranks in the top
// k. Ties break by stable patient order. Throws DataError with fewer than two
// eligible patients.
double recall_at_k(const std::vector<encoder::LatentEmbedding>& embeddings, int query_mod,
                   int target_mod, int k, bool include_missing_tokens = false);

// Number of patients eligible for the (query, target) pair; the analytic
// random baseline for R@k is k divided by this pool size.
int retrieval_pool_size(const std::vector<encoder::LatentEmbedding>& embeddings, int query_mod,
                        int target_mod, bool include_missing_tokens = false);

// Patients eligible as queries for the pair (they hold both modalities).
int eligible_query_count(const std::vector<encoder::LatentEmbedding>& embeddings, int query_mod,
                         int target_mod, bool include_missing_tokens = false);

struct SilhouetteResult {
    double overall = 0.0;
    std::map<int, double> per_label;
};

// Cosine-distance silhouette over unit embeddings labeled by modality.
// Singleton clusters score 0 by convention. Requires at least two distinct
// labels.
SilhouetteResult silhouette(const std::vector<std::vector<double>>& points,
                            const std::vector<int>& labels);

// Convenience: silhouette of latent embeddings by modality label,
// MISSING_TOKEN/DROPPED sources excluded unless requested.
SilhouetteResult modality_silhouette(const std::vector<encoder::LatentEmbedding>& embeddings,
                                     bool include_missing_tokens = false);

struct RetrievalRow {
    int query_mod;
    int target_mod;
    int k;
    double value;
    int pool;
};

// Every ordered modality pair (where computable) at each k, plus the analytic
// pool sizes; macro averages are the mean over computed pairs.
std::vector<RetrievalRow> retrieval_report(const std::vector<encoder::LatentEmbedding>& embeddings,
                                           int n_modalities, const std::vector<int>& ks,
                                           bool include_missing_tokens = false);

void write_retrieval_csv(const std::string& path, const std::vector<RetrievalRow>& rows,
                         const std::vector<cohort::ModalitySpec>& modalities);
void write_silhouette_csv(const std::string& path, const SilhouetteResult& result,
                          const std::vector<cohort::ModalitySpec>& modalities);

// stay_id,modality,source,v_0..v_{D-1} export for external projection tools
void write_embeddings_csv(const std::string& path,
                          const std::vector<encoder::LatentEmbedding>& embeddings,
                          const std::vector<cohort::ModalitySpec>& modalities);

}  // namespace mga::latent_eval
