#pragma once

#include <map>
#include <string>
#include <vector>

#include "mga/decoder.hpp"

namespace mga::interp {

// category key for PREDICT positions in attention-mass maps
inline constexpr int kPredictCategory = -1;

struct PositionAnnotation {
    int position = 0;
    double offset_minutes = 0.0;
    int modality = 0;  // kPredictCategory for PREDICT slots
    bool is_predict = false;
    long event_uid = 0;
};

// Final-layer head-averaged attention plus the per-slot prediction trajectory.
struct AttentionTrace {
    std::string stay_id;
    int seq_len = 0;
    std::vector<PositionAnnotation> annotations;
    std::vector<double> heatmap;  // [T*T] row-major, rows sum to 1
    decoder::Trajectory trajectory;

    double attn(int i, int j) const {
        return heatmap[static_cast<std::size_t>(i) * static_cast<std::size_t>(seq_len) +
                       static_cast<std::size_t>(j)];
    }
};

AttentionTrace extract_trace(decoder::SeqDecoder& dec, const timeline::EventTimeline& timeline,
                             encoder::EncoderBank* bank);

// Attention mass received by each category (modality or PREDICT) from the
// PREDICT rows, averaged over slots; masses sum to 1.
std::map<int, double> modality_attention_mass(const AttentionTrace& trace);

struct AblationReport {
    AttentionTrace baseline;
    AttentionTrace ablated;
    int removed_modality = 0;
    // mean absolute prediction difference over surviving slots, aligned by
    // original event identity
    double trajectory_divergence = 0.0;
    bool flip = false;  // final hard prediction changed at threshold 0.5
    std::map<int, double> attention_shift;  // ablated minus baseline mass
};

AblationReport compare_ablation(decoder::SeqDecoder& dec, const timeline::EventTimeline& timeline,
                                int modality, encoder::EncoderBank* bank);

// Increase in attention mass received by the sink modality after ablation.
double sink_score(const AblationReport& report, int sink_modality);

void write_heatmap_csv(const std::string& path, const AttentionTrace& trace);
void write_annotations_json(const std::string& path, const AttentionTrace& trace,
                            const std::vector<cohort::ModalitySpec>& modalities);
void write_trajectory_pair_csv(const std::string& path, const AblationReport& report);

}  // namespace mga::interp
