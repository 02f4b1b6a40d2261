#include "peav/sed_eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "peav/errors.hpp"

namespace peav::sed {

std::string tracks_to_jsonl(const std::vector<ScoreTrack>& tracks) {
    std::ostringstream out;
    for (const ScoreTrack& t : tracks) {
        nlohmann::json j{{"clip", t.clip_id},
                         {"class", t.class_id},
                         {"rate_hz", t.rate_hz},
                         {"scores", t.scores}};
        out << j.dump() << '\n';
    }
    return out.str();
}

std::vector<ScoreTrack> tracks_from_jsonl(const std::string& text) {
    std::vector<ScoreTrack> out;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw format_error("predictions line " + std::to_string(line_no) + ": " + e.what(),
                               0);
        }
        ScoreTrack t;
        t.clip_id = j.at("clip").get<std::string>();
        t.class_id = j.at("class").get<std::string>();
        t.rate_hz = j.value("rate_hz", 25.0);
        t.scores = j.at("scores").get<std::vector<double>>();
        for (double& v : t.scores) v = std::clamp(v, 0.0, 1.0);
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<ScoreTrack> load_tracks(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw format_error("cannot open predictions '" + path + "'", 0);
    std::stringstream ss;
    ss << in.rdbuf();
    return tracks_from_jsonl(ss.str());
}

void save_tracks(const std::string& path, const std::vector<ScoreTrack>& tracks) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw format_error("cannot write predictions '" + path + "'", 0);
    out << tracks_to_jsonl(tracks);
}

std::vector<double> PsdsParams::default_thresholds(std::size_t n) {
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = double(i + 1) / double(n + 1);
    return t;
}

PsdsParams PsdsParams::defaults() {
    PsdsParams p;
    p.thresholds = default_thresholds();
    return p;
}

void PsdsParams::validate() const {
    if (!(rho_dtc > 0.0 && rho_dtc <= 1.0) || !(rho_gtc > 0.0 && rho_gtc <= 1.0)) {
        throw param_error("psds params: rho_dtc and rho_gtc must lie in (0,1]");
    }
    if (alpha_st < 0.0) throw param_error("psds params: alpha_st must be >= 0");
    if (alpha_ct != 0.0) {
        throw config_error("psds params: cross-trigger weighting (alpha_ct != 0) is not implemented");
    }
    if (e_max <= 0.0) throw param_error("psds params: e_max must be positive");
    if (thresholds.empty()) throw param_error("psds params: thresholds must be non-empty");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        if (!(thresholds[i] > 0.0 && thresholds[i] < 1.0)) {
            throw param_error("psds params: thresholds must lie in (0,1)");
        }
        if (i && thresholds[i] <= thresholds[i - 1]) {
            throw param_error("psds params: thresholds must be strictly increasing");
        }
    }
}

std::vector<double> median_filter(const std::vector<double>& scores, std::size_t width) {
    if (width % 2 == 0 || width == 0) {
        throw param_error("median_filter: width must be odd and positive");
    }
    if (width == 1 || scores.empty()) return scores;
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(scores.size());
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(width / 2);
    std::vector<double> out(scores.size());
    std::vector<double> window(width);
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        for (std::ptrdiff_t k = -half; k <= half; ++k) {
            std::ptrdiff_t j = std::clamp<std::ptrdiff_t>(i + k, 0, n - 1);  // edge replication
            window[static_cast<std::size_t>(k + half)] = scores[static_cast<std::size_t>(j)];
        }
        std::nth_element(window.begin(), window.begin() + half, window.end());
        out[static_cast<std::size_t>(i)] = window[static_cast<std::size_t>(half)];
    }
    return out;
}

std::vector<Interval> decode_events(const std::vector<double>& scores, double threshold,
                                    double rate_hz) {
    if (!(threshold > 0.0 && threshold <= 1.0)) {
        throw param_error("decode_events: threshold must lie in (0,1]");
    }
    std::vector<Interval> out;
    const std::size_t n = scores.size();
    std::size_t i = 0;
    while (i < n) {
        if (scores[i] >= threshold) {
            std::size_t j = i;
            while (j + 1 < n && scores[j + 1] >= threshold) ++j;
            out.push_back({double(i) / rate_hz, double(j + 1) / rate_hz});
            i = j + 1;
        } else {
            ++i;
        }
    }
    return out;
}

namespace {

double intersection(const Interval& a, const Interval& b) {
    return std::max(0.0, std::min(a.offset_s, b.offset_s) - std::max(a.onset_s, b.onset_s));
}

double duration(const Interval& x) { return x.offset_s - x.onset_s; }

}  // namespace

MatchResult match_events(const std::vector<Interval>& pred, const std::vector<Interval>& gt,
                         double rho_dtc, double rho_gtc) {
    MatchResult out;
    std::vector<bool> dtc_valid(pred.size(), false);
    for (std::size_t p = 0; p < pred.size(); ++p) {
        double covered = 0.0;
        for (const Interval& g : gt) covered += intersection(pred[p], g);
        const double dur = duration(pred[p]);
        if (dur > 0.0 && covered / dur >= rho_dtc) {
            dtc_valid[p] = true;
        } else {
            out.false_preds.push_back(p);
        }
    }
    for (std::size_t g = 0; g < gt.size(); ++g) {
        double covered = 0.0;
        for (std::size_t p = 0; p < pred.size(); ++p) {
            if (dtc_valid[p]) covered += intersection(pred[p], gt[g]);
        }
        const double dur = duration(gt[g]);
        if (dur > 0.0 && covered / dur >= rho_gtc) {
            out.detected_gt.push_back(g);
        } else {
            ++out.misses;
        }
    }
    return out;
}

namespace {

struct ClipGt {
    const EventTimeline* timeline;
    std::map<std::string, std::vector<Interval>> by_class;
};

std::map<std::string, ClipGt> index_gt(const std::vector<EventTimeline>& ground_truth) {
    std::map<std::string, ClipGt> out;
    for (const EventTimeline& t : ground_truth) {
        ClipGt& cg = out[t.clip_id];
        cg.timeline = &t;
        for (const TimedEvent& e : t.events) {
            cg.by_class[e.label].push_back({e.onset_s, e.offset_s});
        }
    }
    return out;
}

}  // namespace

PsdsResult psds1(const std::vector<ScoreTrack>& tracks,
                 const std::vector<EventTimeline>& ground_truth, const PsdsParams& params,
                 PsdsMode mode) {
    params.validate();
    auto gt_index = index_gt(ground_truth);

    double total_hours = 0.0;
    for (const EventTimeline& t : ground_truth) total_hours += t.duration_s / 3600.0;
    if (total_hours <= 0.0) throw domain_error("psds1: no evaluated audio");

    // Tracks in scope, grouped by class. target_only keeps only tracks
    // whose class occurs in the clip's own annotation.
    struct ScopedTrack {
        const ScoreTrack* track;
        const std::vector<Interval>* gt;  // may be empty
    };
    static const std::vector<Interval> kNoEvents;
    std::map<std::string, std::vector<ScopedTrack>> by_class;
    std::map<std::string, std::size_t> gt_counts;
    for (const ScoreTrack& track : tracks) {
        auto clip_it = gt_index.find(track.clip_id);
        if (clip_it == gt_index.end()) {
            throw config_error("psds1: track for unknown clip '" + track.clip_id + "'");
        }
        const auto& by = clip_it->second.by_class;
        auto cls_it = by.find(track.class_id);
        const bool present = cls_it != by.end();
        if (mode == PsdsMode::target_only && !present) continue;
        by_class[track.class_id].push_back({&track, present ? &cls_it->second : &kNoEvents});
    }
    for (const auto& [cls, scoped] : by_class) {
        std::size_t n = 0;
        for (const ScopedTrack& st : scoped) n += st.gt->size();
        gt_counts[cls] = n;
    }
    std::size_t total_gt = 0;
    for (const auto& [cls, n] : gt_counts) total_gt += n;
    if (total_gt == 0) throw domain_error("psds1: no ground-truth events in scope");

    PsdsResult result;
    for (double threshold : params.thresholds) {
        std::vector<double> tprs;
        double efpr_sum = 0.0;
        std::size_t efpr_classes = 0;
        for (const auto& [cls, scoped] : by_class) {
            std::size_t tp = 0, fp = 0;
            for (const ScopedTrack& st : scoped) {
                auto events = decode_events(st.track->scores, threshold, st.track->rate_hz);
                MatchResult m = match_events(events, *st.gt, params.rho_dtc, params.rho_gtc);
                tp += m.tp();
                fp += m.fp();
            }
            if (gt_counts[cls] > 0) tprs.push_back(double(tp) / double(gt_counts[cls]));
            efpr_sum += double(fp) / total_hours;
            ++efpr_classes;
        }
        double mean_tpr = 0.0;
        for (double t : tprs) mean_tpr += t;
        mean_tpr /= double(tprs.size());
        double var = 0.0;
        for (double t : tprs) var += (t - mean_tpr) * (t - mean_tpr);
        var /= double(tprs.size());
        const double etpr = std::max(0.0, mean_tpr - params.alpha_st * std::sqrt(var));
        const double efpr = efpr_classes ? efpr_sum / double(efpr_classes) : 0.0;
        result.points.push_back({threshold, efpr, etpr});
    }

    // PSD-ROC: running-maximum TPR envelope over operating points sorted by
    // eFPR, integrated over [0, e_max] and normalized.
    std::vector<PsdsOperatingPoint> pts = result.points;
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
        if (a.efpr != b.efpr) return a.efpr < b.efpr;
        return a.etpr < b.etpr;
    });
    double area = 0.0;
    double prev_x = 0.0, cur_tpr = 0.0;
    for (const PsdsOperatingPoint& p : pts) {
        const double x = std::min(p.efpr, params.e_max);
        if (x > prev_x) {
            area += cur_tpr * (x - prev_x);
            prev_x = x;
        }
        if (p.efpr <= params.e_max) cur_tpr = std::max(cur_tpr, p.etpr);
    }
    area += cur_tpr * (params.e_max - prev_x);
    result.score = area / params.e_max;
    return result;
}

double segment_auroc(const std::vector<ScoreTrack>& tracks,
                     const std::vector<EventTimeline>& ground_truth, double segment_s,
                     bool open_vocab) {
    if (segment_s <= 0.0) throw param_error("segment_auroc: segment length must be positive");
    auto gt_index = index_gt(ground_truth);

    std::vector<std::pair<double, int>> samples;  // (score, label)
    for (const ScoreTrack& track : tracks) {
        auto clip_it = gt_index.find(track.clip_id);
        if (clip_it == gt_index.end()) {
            throw config_error("segment_auroc: track for unknown clip '" + track.clip_id + "'");
        }
        const ClipGt& cg = clip_it->second;
        auto cls_it = cg.by_class.find(track.class_id);
        const bool present = cls_it != cg.by_class.end();
        if (open_vocab && !present) continue;

        const double dur = cg.timeline->duration_s;
        const auto n_seg = static_cast<std::size_t>(std::ceil(dur / segment_s));
        const std::size_t n_frames = track.scores.size();
        for (std::size_t s = 0; s < n_seg; ++s) {
            const double lo = double(s) * segment_s;
            const double hi = std::min(dur, lo + segment_s);
            bool positive = false;
            if (present) {
                for (const Interval& g : cls_it->second) {
                    if (g.onset_s < hi && g.offset_s > lo) {
                        positive = true;
                        break;
                    }
                }
            }
            auto f_lo = static_cast<std::size_t>(std::floor(lo * track.rate_hz));
            auto f_hi = static_cast<std::size_t>(std::ceil(hi * track.rate_hz));
            f_lo = std::min(f_lo, n_frames ? n_frames - 1 : 0);
            f_hi = std::max(f_lo + 1, std::min(f_hi, n_frames));
            double score = 0.0;
            for (std::size_t f = f_lo; f < f_hi; ++f) score = std::max(score, track.scores[f]);
            samples.emplace_back(score, positive ? 1 : 0);
        }
    }

    std::size_t n_pos = 0;
    for (const auto& [s, y] : samples) n_pos += static_cast<std::size_t>(y);
    const std::size_t n_neg = samples.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw domain_error("segment_auroc: need both positive and negative segments");
    }

    // Mann-Whitney with midranks for ties (equivalent to the trapezoid rule
    // over unique thresholds).
    std::sort(samples.begin(), samples.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < samples.size()) {
        std::size_t j = i;
        while (j + 1 < samples.size() && samples[j + 1].first == samples[i].first) ++j;
        const double midrank = 0.5 * (double(i + 1) + double(j + 1));
        for (std::size_t k = i; k <= j; ++k) {
            if (samples[k].second == 1) rank_sum_pos += midrank;
        }
        i = j + 1;
    }
    const double auc =
        (rank_sum_pos - double(n_pos) * double(n_pos + 1) / 2.0) / (double(n_pos) * double(n_neg));
    return auc;
}

}  // namespace peav::sed
