#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "peav/prng.hpp"
#include "peav/sed_eval.hpp"

using namespace peav;
using namespace peav::sed;

namespace {

// Brute-force all-pairs intersection oracle for DTC/GTC matching.
MatchResult match_oracle(const std::vector<Interval>& pred, const std::vector<Interval>& gt,
                         double rho_dtc, double rho_gtc) {
    auto inter = [](const Interval& a, const Interval& b) {
        return std::max(0.0, std::min(a.offset_s, b.offset_s) - std::max(a.onset_s, b.onset_s));
    };
    MatchResult out;
    std::vector<bool> valid(pred.size());
    for (std::size_t p = 0; p < pred.size(); ++p) {
        double cover = 0.0;
        for (const auto& g : gt) cover += inter(pred[p], g);
        valid[p] = (pred[p].offset_s - pred[p].onset_s) > 0.0 &&
                   cover / (pred[p].offset_s - pred[p].onset_s) >= rho_dtc;
        if (!valid[p]) out.false_preds.push_back(p);
    }
    for (std::size_t g = 0; g < gt.size(); ++g) {
        double cover = 0.0;
        for (std::size_t p = 0; p < pred.size(); ++p) {
            if (valid[p]) cover += inter(pred[p], gt[g]);
        }
        if ((gt[g].offset_s - gt[g].onset_s) > 0.0 &&
            cover / (gt[g].offset_s - gt[g].onset_s) >= rho_gtc) {
            out.detected_gt.push_back(g);
        } else {
            ++out.misses;
        }
    }
    return out;
}

std::vector<Interval> random_intervals(PrngStream& rng, std::size_t max_n, double span) {
    std::vector<Interval> out;
    const std::size_t n = rng.next_index(max_n + 1);
    for (std::size_t i = 0; i < n; ++i) {
        double a = rng.next_uniform(0.0, span);
        double b = rng.next_uniform(0.0, span);
        if (a == b) continue;
        out.push_back({std::min(a, b), std::max(a, b)});
    }
    return out;
}

// Tracks that score 1 exactly on GT supports and 0 elsewhere.
std::vector<ScoreTrack> oracle_tracks(const std::vector<EventTimeline>& gts,
                                      const std::vector<std::string>& classes,
                                      double rate = 25.0) {
    std::vector<ScoreTrack> tracks;
    for (const EventTimeline& t : gts) {
        const auto frames = t.frame_count(rate);
        for (const std::string& cls : classes) {
            std::vector<double> scores(frames, 0.0);
            for (const TimedEvent& e : t.events) {
                if (e.label != cls) continue;
                for (std::size_t l = 0; l < frames; ++l) {
                    const double center = (double(l) + 0.5) / rate;
                    if (center >= e.onset_s && center < e.offset_s) scores[l] = 1.0;
                }
            }
            tracks.push_back({t.clip_id, cls, std::move(scores), rate});
        }
    }
    return tracks;
}

}  // namespace

TEST_CASE("median_filter basics") {
    std::vector<double> x{0.2, 0.9, 0.1, 0.4};
    CHECK(median_filter(x, 1) == x);
    CHECK(median_filter({0, 1, 0}, 3) == std::vector<double>{0, 0, 0});
    std::vector<double> constant(10, 0.7);
    CHECK(median_filter(constant, 5) == constant);
    CHECK(median_filter(constant, 9) == constant);
    CHECK_THROWS_AS(median_filter(x, 4), param_error);

    // output values come from the input multiset
    PrngStream rng(3);
    std::vector<double> noisy(50);
    for (double& v : noisy) v = rng.next_double();
    std::vector<double> filtered = median_filter(noisy, 9);
    for (double v : filtered) {
        CHECK(std::find(noisy.begin(), noisy.end(), v) != noisy.end());
    }
}

TEST_CASE("decode_events run extraction") {
    CHECK(decode_events(std::vector<double>(10, 0.0), 0.5, 25.0).empty());

    std::vector<double> scores(200, 0.0);
    for (std::size_t i = 50; i < 125; ++i) scores[i] = 1.0;
    auto events = decode_events(scores, 0.5, 25.0);
    REQUIRE(events.size() == 1);
    CHECK(events[0].onset_s == doctest::Approx(2.0));
    CHECK(events[0].offset_s == doctest::Approx(5.0));

    // threshold above the max score yields nothing
    std::vector<double> low(200, 0.0);
    for (std::size_t i = 50; i < 125; ++i) low[i] = 0.8;
    CHECK(decode_events(low, 0.9, 25.0).empty());
    CHECK_THROWS_AS(decode_events(low, 1.5, 25.0), param_error);

    // runs are disjoint and sorted
    scores[10] = 0.9;
    auto two = decode_events(scores, 0.5, 25.0);
    REQUIRE(two.size() == 2);
    CHECK(two[0].offset_s <= two[1].onset_s);
}

TEST_CASE("match_events closed cases") {
    SUBCASE("exact match") {
        std::vector<Interval> gt{{2.0, 5.0}};
        MatchResult r = match_events(gt, gt, 0.7, 0.7);
        CHECK(r.tp() == 1);
        CHECK(r.fp() == 0);
        CHECK(r.misses == 0);
    }

    SUBCASE("over-wide prediction fails DTC") {
        std::vector<Interval> gt{{2.0, 5.0}};
        std::vector<Interval> pred{{0.0, 10.0}};  // intersection 3/10 < 0.7
        MatchResult r = match_events(pred, gt, 0.7, 0.7);
        CHECK(r.tp() == 0);
        CHECK(r.fp() == 1);
        CHECK(r.misses == 1);
    }

    SUBCASE("no predictions") {
        std::vector<Interval> gt{{0.0, 1.0}, {2.0, 3.0}};
        MatchResult r = match_events({}, gt, 0.7, 0.7);
        CHECK(r.tp() == 0);
        CHECK(r.fp() == 0);
        CHECK(r.misses == 2);
    }
}

TEST_CASE("match_events equals the brute-force oracle on 200 random instances") {
    PrngStream rng(404);
    for (int trial = 0; trial < 200; ++trial) {
        auto pred = random_intervals(rng, 3, 10.0);
        auto gt = random_intervals(rng, 3, 10.0);
        MatchResult got = match_events(pred, gt, 0.7, 0.7);
        MatchResult want = match_oracle(pred, gt, 0.7, 0.7);
        CHECK(got.detected_gt == want.detected_gt);
        CHECK(got.false_preds == want.false_preds);
        CHECK(got.misses == want.misses);
    }
}

TEST_CASE("psds params validation") {
    PsdsParams p = PsdsParams::defaults();
    CHECK_NOTHROW(p.validate());
    p.alpha_ct = 0.5;
    CHECK_THROWS_AS(p.validate(), config_error);
    p = PsdsParams::defaults();
    p.thresholds = {0.5, 0.5};
    CHECK_THROWS_AS(p.validate(), param_error);
}

TEST_CASE("psds1 perfect and empty detectors") {
    std::vector<EventTimeline> gts = {
        {"c0", 10.0, {{"bark", 1.0, 3.0}}},
        {"c1", 10.0, {{"bark", 2.0, 4.0}, {"bark", 6.0, 8.0}}},
    };
    PsdsParams params = PsdsParams::defaults();

    SUBCASE("perfect detector scores 1") {
        auto tracks = oracle_tracks(gts, {"bark"});
        PsdsResult r = psds1(tracks, gts, params, PsdsMode::all_classes);
        CHECK(r.score == doctest::Approx(1.0).epsilon(1e-9));
    }

    SUBCASE("empty detector scores 0") {
        std::vector<ScoreTrack> tracks;
        for (const auto& t : gts) {
            tracks.push_back({t.clip_id, "bark", std::vector<double>(250, 0.0), 25.0});
        }
        PsdsResult r = psds1(tracks, gts, params, PsdsMode::all_classes);
        CHECK(r.score == 0.0);
    }

    SUBCASE("no gt in scope is a domain error") {
        std::vector<EventTimeline> empty_gts = {{"c0", 10.0, {}}};
        std::vector<ScoreTrack> tracks{{"c0", "bark", std::vector<double>(250, 0.0), 25.0}};
        CHECK_THROWS_AS(psds1(tracks, empty_gts, params, PsdsMode::all_classes), domain_error);
    }
}

TEST_CASE("variance penalty is moot for a single class") {
    std::vector<EventTimeline> gts = {{"c0", 10.0, {{"bark", 1.0, 3.0}}}};
    auto tracks = oracle_tracks(gts, {"bark"});
    // degrade scores a little so the curve is non-trivial
    for (auto& t : tracks) {
        for (std::size_t i = 0; i < t.scores.size(); i += 7) t.scores[i] *= 0.4;
    }
    PsdsParams with = PsdsParams::defaults();
    PsdsParams without = PsdsParams::defaults();
    without.alpha_st = 0.0;
    CHECK(psds1(tracks, gts, with, PsdsMode::all_classes).score ==
          doctest::Approx(psds1(tracks, gts, without, PsdsMode::all_classes).score)
              .epsilon(1e-12));
}

TEST_CASE("target-only mode drops cross-class false positives") {
    // clip c0 contains bark only; a siren track fires on it anyway
    std::vector<EventTimeline> gts = {
        {"c0", 10.0, {{"bark", 1.0, 3.0}}},
        {"c1", 10.0, {{"siren", 5.0, 7.0}}},
    };
    auto tracks = oracle_tracks(gts, {"bark", "siren"});
    for (auto& t : tracks) {
        if (t.clip_id == "c0" && t.class_id == "siren") {
            for (std::size_t i = 100; i < 150; ++i) t.scores[i] = 1.0;  // spurious
        }
    }
    PsdsParams params = PsdsParams::defaults();
    const double a = psds1(tracks, gts, params, PsdsMode::all_classes).score;
    const double t = psds1(tracks, gts, params, PsdsMode::target_only).score;
    CHECK(t >= a);
    CHECK(t == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(a < 1.0);
}

TEST_CASE("psds1 is monotone under prediction improvement") {
    PrngStream rng(77);
    std::vector<EventTimeline> gts = {
        {"c0", 10.0, {{"bark", 1.0, 3.0}, {"siren", 4.0, 6.0}}},
        {"c1", 10.0, {{"bark", 0.5, 2.0}}},
    };
    // noisy detector
    std::vector<ScoreTrack> noisy;
    for (const auto& t : gts) {
        for (const std::string& cls : {"bark", "siren"}) {
            std::vector<double> scores(250);
            for (double& v : scores) v = rng.next_double() * 0.8;
            noisy.push_back({t.clip_id, cls, std::move(scores), 25.0});
        }
    }
    PsdsParams params = PsdsParams::defaults();
    const double noisy_score = psds1(noisy, gts, params, PsdsMode::all_classes).score;
    const double oracle_score =
        psds1(oracle_tracks(gts, {"bark", "siren"}), gts, params, PsdsMode::all_classes).score;
    CHECK(oracle_score >= noisy_score);
    CHECK(oracle_score == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("segment_auroc closed cases") {
    std::vector<EventTimeline> gts = {{"c0", 4.0, {{"bark", 0.0, 2.0}}}};

    SUBCASE("perfect separation scores 1, constant scores 0.5") {
        auto tracks = oracle_tracks(gts, {"bark"});
        CHECK(segment_auroc(tracks, gts, 1.0, false) == doctest::Approx(1.0));

        std::vector<ScoreTrack> flat{{"c0", "bark", std::vector<double>(100, 0.3), 25.0}};
        CHECK(segment_auroc(flat, gts, 1.0, false) == doctest::Approx(0.5));
    }

    SUBCASE("hand-computed rank case 0.75") {
        // 4 segments scored [0.9, 0.8, 0.3, 0.1] labelled [1, 0, 1, 0]
        std::vector<EventTimeline> gt2 = {
            {"c0", 4.0, {{"bark", 0.2, 0.8}, {"bark", 2.2, 2.8}}}};
        std::vector<double> scores(100, 0.0);
        auto fill = [&](std::size_t seg, double v) {
            for (std::size_t i = seg * 25; i < (seg + 1) * 25; ++i) scores[i] = v;
        };
        fill(0, 0.9);
        fill(1, 0.8);
        fill(2, 0.3);
        fill(3, 0.1);
        std::vector<ScoreTrack> tracks{{"c0", "bark", scores, 25.0}};
        CHECK(segment_auroc(tracks, gt2, 1.0, false) == doctest::Approx(0.75));
    }

    SUBCASE("degenerate label sets are domain errors") {
        std::vector<EventTimeline> all_pos = {{"c0", 2.0, {{"bark", 0.0, 2.0}}}};
        auto tracks = oracle_tracks(all_pos, {"bark"});
        CHECK_THROWS_AS(segment_auroc(tracks, all_pos, 1.0, false), domain_error);
    }
}

TEST_CASE("segment_auroc is invariant under monotone transforms") {
    PrngStream rng(31);
    std::vector<EventTimeline> gts = {
        {"c0", 8.0, {{"bark", 1.0, 3.0}}},
        {"c1", 8.0, {{"bark", 4.0, 6.5}}},
    };
    std::vector<ScoreTrack> tracks;
    for (const auto& t : gts) {
        std::vector<double> scores(200);
        for (double& v : scores) v = rng.next_double();
        tracks.push_back({t.clip_id, "bark", std::move(scores), 25.0});
    }
    const double base = segment_auroc(tracks, gts, 1.0, false);
    for (auto& t : tracks) {
        for (double& v : t.scores) v = 1.0 / (1.0 + std::exp(-(3.0 * v - 1.0)));  // monotone
    }
    CHECK(segment_auroc(tracks, gts, 1.0, false) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("predictions jsonl round-trip") {
    std::vector<ScoreTrack> tracks = {
        {"c0", "bark", {0.1, 0.9, 0.4}, 25.0},
        {"c1", "siren", {0.0, 1.0}, 12.5},
    };
    auto back = tracks_from_jsonl(tracks_to_jsonl(tracks));
    REQUIRE(back.size() == 2);
    CHECK(back[0].clip_id == "c0");
    CHECK(back[0].scores == tracks[0].scores);
    CHECK(back[1].rate_hz == doctest::Approx(12.5));

    // out-of-range scores clamp to [0,1] on load
    auto clamped = tracks_from_jsonl(R"({"clip":"x","class":"y","scores":[-0.5,1.5]})" "\n");
    CHECK(clamped[0].scores == std::vector<double>{0.0, 1.0});

    CHECK_THROWS_AS(tracks_from_jsonl("not json\n"), format_error);
}

TEST_CASE("open-vocabulary restriction keeps only per-clip classes") {
    std::vector<EventTimeline> gts = {
        {"c0", 4.0, {{"bark", 0.0, 2.0}}},
        {"c1", 4.0, {{"siren", 1.0, 3.0}}},
    };
    auto tracks = oracle_tracks(gts, {"bark", "siren"});
    // cross-class tracks exist (bark on c1, siren on c0) but are all-zero;
    // open vocab drops them from scoring entirely
    const double open = segment_auroc(tracks, gts, 1.0, true);
    CHECK(open == doctest::Approx(1.0));
}
