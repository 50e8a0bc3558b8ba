#include "mga/timeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "mga/errors.hpp"

namespace mga::timeline {

EventTimeline assemble(const std::vector<cohort::ModalityRecord>& stay_records,
                       const cohort::StayLabels& labels) {
    EventTimeline tl;
    tl.labels = labels;
    std::vector<std::pair<std::size_t, const cohort::ModalityRecord*>> present;
    for (std::size_t i = 0; i < stay_records.size(); ++i) {
        const auto& r = stay_records[i];
        if (r.absent) continue;
        if (!present.empty() && r.stay_id != present.front().second->stay_id)
            throw DataError("assemble: records from more than one stay");
        present.emplace_back(i, &r);
    }
    if (present.empty()) throw DataError("assemble: stay has zero events");
    tl.stay_id = present.front().second->stay_id;

    std::stable_sort(present.begin(), present.end(), [](const auto& a, const auto& b) {
        if (a.second->offset_minutes != b.second->offset_minutes)
            return a.second->offset_minutes < b.second->offset_minutes;
        return a.second->modality < b.second->modality;
    });

    long uid = 0;
    for (const auto& [idx, r] : present) {
        TimelineEvent e;
        e.offset_minutes = r->offset_minutes;
        e.modality = r->modality;
        e.features.reserve(r->features.size());
        for (double v : r->features) e.features.push_back(cohort::sign_log_scale(v));
        e.uid = uid++;
        tl.events.push_back(std::move(e));
    }
    if (static_cast<int>(tl.events.size()) > kMaxEvents) {
        // keep the most recent events
        tl.events.erase(tl.events.begin(),
                        tl.events.end() - static_cast<std::ptrdiff_t>(kMaxEvents));
    }
    return tl;
}

EventTimeline ablate_modality(const EventTimeline& timeline, int modality) {
    EventTimeline out;
    out.stay_id = timeline.stay_id;
    out.labels = timeline.labels;
    for (const auto& e : timeline.events)
        if (e.modality != modality) out.events.push_back(e);
    if (out.events.empty())
        throw DataError("ablate_modality: removing modality " + std::to_string(modality) +
                        " empties stay " + timeline.stay_id);
    return out;
}

std::vector<int> present_modalities(const EventTimeline& timeline) {
    std::set<int> mods;
    for (const auto& e : timeline.events) mods.insert(e.modality);
    return {mods.begin(), mods.end()};
}

std::vector<EventTimeline> build_timelines(const std::vector<cohort::ModalityRecord>& records,
                                           const std::map<std::string, cohort::StayLabels>& labels,
                                           const std::vector<std::string>& stays) {
    std::map<std::string, std::vector<cohort::ModalityRecord>> by_stay;
    std::set<std::string> wanted(stays.begin(), stays.end());
    for (const auto& r : records)
        if (wanted.count(r.stay_id)) by_stay[r.stay_id].push_back(r);

    std::vector<EventTimeline> out;
    for (const auto& stay : stays) {
        auto rec_it = by_stay.find(stay);
        if (rec_it == by_stay.end()) throw DataError("build_timelines: no records for " + stay);
        auto lab_it = labels.find(stay);
        if (lab_it == labels.end()) throw DataError("build_timelines: no labels for " + stay);
        out.push_back(assemble(rec_it->second, lab_it->second));
    }
    return out;
}

void write_timelines_jsonl(const std::string& path, const std::vector<EventTimeline>& timelines,
                           const std::vector<cohort::ModalitySpec>& modalities) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (const auto& tl : timelines) {
        nlohmann::json events = nlohmann::json::array();
        for (const auto& e : tl.events) {
            events.push_back({{"offset", e.offset_minutes},
                              {"modality", modalities[static_cast<std::size_t>(e.modality)].name},
                              {"uid", e.uid}});
        }
        nlohmann::json j;
        j["stay_id"] = tl.stay_id;
        j["events"] = events;
        out << j.dump() << '\n';
    }
}

}  // namespace mga::timeline
