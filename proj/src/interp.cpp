#include "mga/interp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "mga/csv.hpp"
#include "mga/errors.hpp"

namespace mga::interp {

using decoder::SeqDecoder;
using timeline::EventTimeline;

AttentionTrace extract_trace(SeqDecoder& dec, const EventTimeline& timeline,
                             encoder::EncoderBank* bank) {
    nn::Tape tape(false);
    decoder::ForwardResult fr = dec.forward(tape, timeline, bank, false, nullptr);

    AttentionTrace trace;
    trace.stay_id = timeline.stay_id;
    trace.seq_len = fr.seq_len;
    int t = fr.seq_len;
    trace.heatmap.assign(static_cast<std::size_t>(t) * static_cast<std::size_t>(t), 0.0);
    double inv_heads = 1.0 / static_cast<double>(fr.final_attention.size());
    for (const auto& head : fr.final_attention)
        for (std::size_t i = 0; i < head.size(); ++i) trace.heatmap[i] += head[i] * inv_heads;

    for (int e = 0; e < static_cast<int>(timeline.events.size()); ++e) {
        const auto& ev = timeline.events[static_cast<std::size_t>(e)];
        PositionAnnotation event_pos{2 * e, ev.offset_minutes, ev.modality, false, ev.uid};
        PositionAnnotation slot_pos{2 * e + 1, ev.offset_minutes, kPredictCategory, true, ev.uid};
        trace.annotations.push_back(event_pos);
        trace.annotations.push_back(slot_pos);
    }

    trace.trajectory = decoder::predict(dec, timeline, bank);
    return trace;
}

std::map<int, double> modality_attention_mass(const AttentionTrace& trace) {
    std::map<int, double> mass;
    int t = trace.seq_len;
    int slots = 0;
    for (const auto& row_ann : trace.annotations) {
        if (!row_ann.is_predict) continue;
        ++slots;
        for (int j = 0; j < t; ++j) {
            const auto& col_ann = trace.annotations[static_cast<std::size_t>(j)];
            mass[col_ann.is_predict ? kPredictCategory : col_ann.modality] +=
                trace.attn(row_ann.position, j);
        }
    }
    if (slots == 0) throw DataError("modality_attention_mass: trace has no PREDICT rows");
    for (auto& [cat, m] : mass) m /= static_cast<double>(slots);
    return mass;
}

AblationReport compare_ablation(SeqDecoder& dec, const EventTimeline& timeline, int modality,
                                encoder::EncoderBank* bank) {
    AblationReport report;
    report.removed_modality = modality;
    report.baseline = extract_trace(dec, timeline, bank);
    EventTimeline ablated = timeline::ablate_modality(timeline, modality);
    report.ablated = extract_trace(dec, ablated, bank);

    // align surviving slots by original event identity
    std::map<long, std::size_t> base_slot_by_uid;
    for (std::size_t s = 0; s < report.baseline.trajectory.event_uids.size(); ++s)
        base_slot_by_uid[report.baseline.trajectory.event_uids[s]] = s;
    double divergence = 0.0;
    int compared = 0;
    for (std::size_t s = 0; s < report.ablated.trajectory.event_uids.size(); ++s) {
        auto it = base_slot_by_uid.find(report.ablated.trajectory.event_uids[s]);
        if (it == base_slot_by_uid.end()) continue;
        const auto& pa = report.ablated.trajectory.per_slot[s];
        const auto& pb = report.baseline.trajectory.per_slot[it->second];
        for (std::size_t c = 0; c < pa.size(); ++c) divergence += std::abs(pa[c] - pb[c]);
        compared += static_cast<int>(pa.size());
    }
    report.trajectory_divergence = compared > 0 ? divergence / compared : 0.0;

    if (dec.config().task != decoder::Task::Los) {
        const auto fb = report.baseline.trajectory.final_prediction();
        const auto fa = report.ablated.trajectory.final_prediction();
        for (std::size_t c = 0; c < fb.size() && c < fa.size(); ++c)
            if ((fb[c] >= 0.5) != (fa[c] >= 0.5)) report.flip = true;
    }

    auto base_mass = modality_attention_mass(report.baseline);
    auto abl_mass = modality_attention_mass(report.ablated);
    std::set<int> cats;
    for (const auto& [c, v] : base_mass) cats.insert(c);
    for (const auto& [c, v] : abl_mass) cats.insert(c);
    for (int c : cats) {
        double b = base_mass.count(c) ? base_mass.at(c) : 0.0;
        double a = abl_mass.count(c) ? abl_mass.at(c) : 0.0;
        report.attention_shift[c] = a - b;
    }
    return report;
}

double sink_score(const AblationReport& report, int sink_modality) {
    auto present_in = [&](const AttentionTrace& trace) {
        for (const auto& ann : trace.annotations)
            if (!ann.is_predict && ann.modality == sink_modality) return true;
        return false;
    };
    if (!present_in(report.baseline) || !present_in(report.ablated))
        throw DataError("sink_score: sink modality absent from a trace");
    return report.attention_shift.at(sink_modality);
}

void write_heatmap_csv(const std::string& path, const AttentionTrace& trace) {
    CsvWriter w(path);
    int t = trace.seq_len;
    for (int i = 0; i < t; ++i) {
        std::vector<std::string> row;
        for (int j = 0; j < t; ++j) row.push_back(fmt_double(trace.attn(i, j)));
        w.row(row);
    }
}

void write_annotations_json(const std::string& path, const AttentionTrace& trace,
                            const std::vector<cohort::ModalitySpec>& modalities) {
    nlohmann::json positions = nlohmann::json::array();
    for (const auto& ann : trace.annotations) {
        nlohmann::json j;
        j["position"] = ann.position;
        j["offset_minutes"] = ann.offset_minutes;
        j["kind"] = ann.is_predict
                        ? "PREDICT"
                        : modalities[static_cast<std::size_t>(ann.modality)].name;
        j["event_uid"] = ann.event_uid;
        positions.push_back(j);
    }
    nlohmann::json root;
    root["stay_id"] = trace.stay_id;
    root["seq_len"] = trace.seq_len;
    root["positions"] = positions;
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << root.dump(2) << '\n';
}

void write_trajectory_pair_csv(const std::string& path, const AblationReport& report) {
    CsvWriter w(path);
    w.row({"slot", "offset", "baseline_pred", "ablated_pred"});
    std::map<long, std::size_t> abl_slot_by_uid;
    for (std::size_t s = 0; s < report.ablated.trajectory.event_uids.size(); ++s)
        abl_slot_by_uid[report.ablated.trajectory.event_uids[s]] = s;
    const auto& base = report.baseline.trajectory;
    for (std::size_t s = 0; s < base.per_slot.size(); ++s) {
        std::string ablated_cell;
        auto it = abl_slot_by_uid.find(base.event_uids[s]);
        if (it != abl_slot_by_uid.end())
            ablated_cell = fmt_double(report.ablated.trajectory.per_slot[it->second][0]);
        w.row({std::to_string(s), fmt_double(base.slot_offsets[s]), fmt_double(base.per_slot[s][0]),
               ablated_cell});
    }
}

}  // namespace mga::interp
