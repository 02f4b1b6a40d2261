#pragma once

#include <map>
#include <string>
#include <vector>

#include "peav/frame_align.hpp"
#include "peav/tensor.hpp"

namespace peav::sed {

/// Per-(clip, class) frame scores in [0,1] at a fixed rate.
struct ScoreTrack {
    std::string clip_id;
    std::string class_id;
    std::vector<double> scores;
    double rate_hz = 25.0;
};

/// Predictions JSONL round-trip: one {clip, class, rate_hz, scores} per line.
std::string tracks_to_jsonl(const std::vector<ScoreTrack>& tracks);
std::vector<ScoreTrack> tracks_from_jsonl(const std::string& text);
std::vector<ScoreTrack> load_tracks(const std::string& path);
void save_tracks(const std::string& path, const std::vector<ScoreTrack>& tracks);

/// PSDS1 configuration. Cross-trigger weighting is accepted for interface
/// compatibility but must be zero; the cited configuration never uses it.
struct PsdsParams {
    double rho_dtc = 0.7;
    double rho_gtc = 0.7;
    double alpha_st = 1.0;
    double alpha_ct = 0.0;
    double e_max = 100.0;             // FP per hour
    std::vector<double> thresholds;   // strictly increasing, in (0,1)

    static std::vector<double> default_thresholds(std::size_t n = 50);
    static PsdsParams defaults();
    void validate() const;
};

enum class PsdsMode { all_classes, target_only };

/// Sliding median with edge replication; width must be odd. Width 1 is the
/// identity and constant inputs pass through unchanged.
std::vector<double> median_filter(const std::vector<double>& scores, std::size_t width);

struct Interval {
    double onset_s = 0.0;
    double offset_s = 0.0;
};

/// Maximal runs of frames with score >= threshold, in seconds via frame
/// edges. Runs are disjoint and sorted.
std::vector<Interval> decode_events(const std::vector<double>& scores, double threshold,
                                    double rate_hz);

/// Intersection-based matching: a prediction is DTC-valid when its summed
/// same-class GT intersection covers rho_dtc of its duration; a GT event
/// is detected when DTC-valid predictions cover rho_gtc of it. TPs count
/// detected GT events, FPs count DTC-invalid predictions.
struct MatchResult {
    std::vector<std::size_t> detected_gt;   // indices into gt
    std::vector<std::size_t> false_preds;   // indices into pred
    std::size_t misses = 0;

    std::size_t tp() const { return detected_gt.size(); }
    std::size_t fp() const { return false_preds.size(); }
};

MatchResult match_events(const std::vector<Interval>& pred, const std::vector<Interval>& gt,
                         double rho_dtc, double rho_gtc);

struct PsdsOperatingPoint {
    double threshold = 0.0;
    double efpr = 0.0;       // FP per hour, averaged over classes in scope
    double etpr = 0.0;       // mean TPR - alpha_st * std, clipped at 0
};

struct PsdsResult {
    double score = 0.0;      // area under the PSD-ROC envelope / e_max
    std::vector<PsdsOperatingPoint> points;
};

/// PSDS1 over score tracks against ground-truth timelines. target_only
/// restricts each clip's evaluated classes to those present in its own
/// annotation. Throws domain_error when no GT event is in scope.
PsdsResult psds1(const std::vector<ScoreTrack>& tracks,
                 const std::vector<EventTimeline>& ground_truth, const PsdsParams& params,
                 PsdsMode mode);

/// Segment-level AUROC: clips are tiled into segment_s-long segments; a
/// segment is positive when GT of the class overlaps it and its score is
/// the max frame score inside it. With open_vocab set, each clip
/// contributes only classes present in its own annotation. Ties follow the
/// rank-statistic (trapezoid over unique thresholds) rule.
double segment_auroc(const std::vector<ScoreTrack>& tracks,
                     const std::vector<EventTimeline>& ground_truth, double segment_s,
                     bool open_vocab);

}  // namespace peav::sed
