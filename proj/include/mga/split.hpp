#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mga/cohort.hpp"

namespace mga::split {

enum class Fold { Train = 0, Val = 1, Test = 2 };

std::string fold_name(Fold f);

// Missingness-aware hybrid stratified split without patient leakage.
struct CohortSplit {
    std::map<std::string, Fold> assignment;        // stay_id -> fold
    std::map<std::string, std::uint32_t> strata;   // stay_id -> modality-combination bitmask
    double fractions[3] = {0.70, 0.15, 0.15};
    std::vector<std::string> warnings;             // small-stratum fallbacks
};

// Patients with ids are grouped and stratified by the earliest stay's modality
// combination ("earliest" = smallest stay_id; synthetic ids are assigned in
// admission order). Orphan stays are stratified independently by their own
// combination. Strata with fewer than 3 members go wholly to train, with a
// warning recorded.
CohortSplit stratify(const std::vector<cohort::ModalityRecord>& records, std::uint64_t seed);

struct SplitReportRow {
    std::string split;
    int stays = 0;
    int patient_stays = 0;
    int orphan_stays = 0;
    std::vector<int> present;  // per modality
    std::vector<int> missing;
};

std::vector<SplitReportRow> split_report(const CohortSplit& split,
                                         const std::vector<cohort::ModalityRecord>& records,
                                         int n_modalities);

void write_split_csv(const std::string& path, const CohortSplit& split);
CohortSplit read_split_csv(const std::string& path);

std::vector<std::string> stays_in_fold(const CohortSplit& split, Fold fold);

}  // namespace mga::split
