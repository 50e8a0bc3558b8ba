#pragma once

#include <map>
#include <string>
#include <vector>

#include "mga/cohort.hpp"

namespace mga::timeline {

// 64 events = 128 sequence positions with the interleaved PREDICT slots
inline constexpr int kMaxEvents = 64;

struct TimelineEvent {
    double offset_minutes = 0.0;
    int modality = 0;
    std::vector<double> features;   // dataloader-scaled raw features
    std::vector<double> embedding;  // cached unit embedding when encoders are frozen
    long uid = 0;                   // stable identity for ablation alignment
};

// Chronologically sorted events; a PREDICT slot follows every event, so event
// j occupies sequence index 2j and its slot index 2j+1.
struct EventTimeline {
    std::string stay_id;
    std::vector<TimelineEvent> events;
    cohort::StayLabels labels;

    int sequence_length() const { return 2 * static_cast<int>(events.size()); }
};

// Sort one stay's records by (offset, modality, input order), drop absence
// markers, scale features, and truncate from the front beyond kMaxEvents.
// Throws DataError for a stay with zero events.
EventTimeline assemble(const std::vector<cohort::ModalityRecord>& stay_records,
                       const cohort::StayLabels& labels);

// Remove all events of one modality together with their paired PREDICT slots;
// surviving order and uids are preserved. Throws DataError when the ablation
// would empty the timeline.
EventTimeline ablate_modality(const EventTimeline& timeline, int modality);

std::vector<int> present_modalities(const EventTimeline& timeline);

// Group records by stay and assemble; stays missing labels are rejected.
std::vector<EventTimeline> build_timelines(const std::vector<cohort::ModalityRecord>& records,
                                           const std::map<std::string, cohort::StayLabels>& labels,
                                           const std::vector<std::string>& stays);

// Audit export: one JSON line per stay with ordered (offset, modality) pairs.
void write_timelines_jsonl(const std::string& path, const std::vector<EventTimeline>& timelines,
                           const std::vector<cohort::ModalitySpec>& modalities);

}  // namespace mga::timeline
