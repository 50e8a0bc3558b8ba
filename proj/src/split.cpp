#include "mga/split.hpp"

#include <algorithm>
#include <array>
#include <set>

#include "mga/csv.hpp"
#include "mga/errors.hpp"
#include "mga/rng.hpp"

namespace mga::split {

namespace {

// One unit of assignment: a patient (all their stays move together) or a
// single orphan stay.
struct Unit {
    std::string key;                  // patient_id or stay_id
    std::vector<std::string> stays;
    std::uint32_t stratum = 0;
    bool orphan = false;
};

// Largest-remainder allocation of n units to the three folds.
std::array<int, 3> allocate(int n, const double fractions[3]) {
    std::array<int, 3> counts{};
    std::array<double, 3> rema{};
    int assigned = 0;
    for (int f = 0; f < 3; ++f) {
        double q = fractions[f] * n;
        counts[static_cast<std::size_t>(f)] = static_cast<int>(q);
        rema[static_cast<std::size_t>(f)] = q - counts[static_cast<std::size_t>(f)];
        assigned += counts[static_cast<std::size_t>(f)];
    }
    // distribute leftovers by largest remainder, train > val > test on ties
    std::array<int, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
        return rema[static_cast<std::size_t>(x)] > rema[static_cast<std::size_t>(y)];
    });
    for (int r = 0; r < n - assigned; ++r)
        ++counts[static_cast<std::size_t>(order[static_cast<std::size_t>(r % 3)])];
    return counts;
}

}  // namespace

std::string fold_name(Fold f) {
    switch (f) {
        case Fold::Train: return "train";
        case Fold::Val: return "val";
        case Fold::Test: return "test";
    }
    return "?";
}

CohortSplit stratify(const std::vector<cohort::ModalityRecord>& records, std::uint64_t seed) {
    if (records.empty()) throw DataError("stratify: no records");

    // per-stay bookkeeping
    std::map<std::string, std::uint32_t> stay_mask;
    std::map<std::string, std::string> stay_patient;
    for (const auto& r : records) {
        auto& mask = stay_mask[r.stay_id];
        if (!r.absent) mask |= (1u << static_cast<unsigned>(r.modality));
        stay_patient[r.stay_id] = r.patient_id;
    }

    // group into units
    std::map<std::string, Unit> patient_units;
    std::vector<Unit> units;
    for (const auto& [stay, patient] : stay_patient) {
        if (patient.empty()) {
            Unit u;
            u.key = stay;
            u.stays = {stay};
            u.stratum = stay_mask[stay];
            u.orphan = true;
            units.push_back(std::move(u));
        } else {
            Unit& u = patient_units[patient];
            u.key = patient;
            u.stays.push_back(stay);
        }
    }
    for (auto& [patient, u] : patient_units) {
        // earliest stay's combination defines the stratum; stays are iterated
        // in id order (admission order for synthetic cohorts)
        std::sort(u.stays.begin(), u.stays.end());
        u.stratum = stay_mask[u.stays.front()];
        units.push_back(u);
    }

    // bucket units by (orphan, stratum); orphan strata are split independently
    std::map<std::pair<bool, std::uint32_t>, std::vector<Unit*>> buckets;
    for (auto& u : units) buckets[{u.orphan, u.stratum}].push_back(&u);

    CohortSplit out;
    Rng rng(seed);
    for (auto& [key, members] : buckets) {
        std::sort(members.begin(), members.end(),
                  [](const Unit* a, const Unit* b) { return a->key < b->key; });
        auto assign_all = [&](Unit* u, Fold f) {
            for (const auto& stay : u->stays) {
                out.assignment[stay] = f;
                out.strata[stay] = u->stratum;
            }
        };
        if (members.size() < 3) {
            for (Unit* u : members) assign_all(u, Fold::Train);
            out.warnings.push_back("stratum " + std::to_string(key.second) +
                                   (key.first ? " (orphan)" : " (patient)") + " has " +
                                   std::to_string(members.size()) +
                                   " members; assigned wholly to train");
            continue;
        }
        std::vector<std::size_t> idx(members.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        rng.shuffle(idx);
        auto counts = allocate(static_cast<int>(members.size()), out.fractions);
        std::size_t cursor = 0;
        for (int f = 0; f < 3; ++f) {
            for (int c = 0; c < counts[static_cast<std::size_t>(f)]; ++c) {
                assign_all(members[idx[cursor++]], static_cast<Fold>(f));
            }
        }
    }
    return out;
}

std::vector<SplitReportRow> split_report(const CohortSplit& split,
                                         const std::vector<cohort::ModalityRecord>& records,
                                         int n_modalities) {
    std::map<std::string, std::set<int>> present_mods;
    std::map<std::string, bool> is_orphan;
    for (const auto& r : records) {
        if (!r.absent) present_mods[r.stay_id].insert(r.modality);
        is_orphan[r.stay_id] = r.patient_id.empty();
    }
    std::vector<SplitReportRow> rows(3);
    for (int f = 0; f < 3; ++f) {
        auto& row = rows[static_cast<std::size_t>(f)];
        row.split = fold_name(static_cast<Fold>(f));
        row.present.assign(static_cast<std::size_t>(n_modalities), 0);
        row.missing.assign(static_cast<std::size_t>(n_modalities), 0);
    }
    for (const auto& [stay, fold] : split.assignment) {
        auto& row = rows[static_cast<std::size_t>(fold)];
        ++row.stays;
        if (is_orphan[stay]) {
            ++row.orphan_stays;
        } else {
            ++row.patient_stays;
        }
        for (int m = 0; m < n_modalities; ++m) {
            if (present_mods[stay].count(m)) {
                ++row.present[static_cast<std::size_t>(m)];
            } else {
                ++row.missing[static_cast<std::size_t>(m)];
            }
        }
    }
    return rows;
}

void write_split_csv(const std::string& path, const CohortSplit& split) {
    CsvWriter w(path);
    w.row({"stay_id", "split", "stratum_bitmask"});
    for (const auto& [stay, fold] : split.assignment)
        w.row({stay, fold_name(fold), std::to_string(split.strata.at(stay))});
}

CohortSplit read_split_csv(const std::string& path) {
    auto rows = read_csv(path);
    CohortSplit out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& row = rows[i];
        if (row.size() != 3) throw DataError("split csv: bad row at line " + std::to_string(i + 1));
        Fold f;
        if (row[1] == "train") {
            f = Fold::Train;
        } else if (row[1] == "val") {
            f = Fold::Val;
        } else if (row[1] == "test") {
            f = Fold::Test;
        } else {
            throw DataError("split csv: unknown fold " + row[1]);
        }
        out.assignment[row[0]] = f;
        out.strata[row[0]] = static_cast<std::uint32_t>(std::stoul(row[2]));
    }
    return out;
}

std::vector<std::string> stays_in_fold(const CohortSplit& split, Fold fold) {
    std::vector<std::string> stays;
    for (const auto& [stay, f] : split.assignment)
        if (f == fold) stays.push_back(stay);
    return stays;
}

}  // namespace mga::split
