#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "peav/frame_align.hpp"
#include "peav/model.hpp"
#include "peav/tensor.hpp"

namespace peav {

/// One generated multimodal clip as recorded in the manifest.
struct ClipRecord {
    std::string id;
    std::uint64_t concept_id = 0;
    double duration_s = 0.0;
    double noise = 0.0;
    std::string domain;   // caption-type tag: speech | sound | music
    std::string source;   // real | synthetic
    bool has_audio = true;
    bool has_video = true;
    std::map<std::string, std::string> caption_ids;    // kind -> caption id
    std::optional<std::string> transcript_id;
    std::optional<std::string> lid;
    bool compositional = false;
    std::uint64_t part_a = 0, part_b = 0;
    std::map<std::string, std::string> feature_paths;  // role -> relative path

    StubDescriptor stub() const;
};

struct Manifest {
    std::vector<ClipRecord> clips;

    std::string to_jsonl() const;
    static Manifest from_jsonl(const std::string& text);
    static Manifest load(const std::string& path);
    void save(const std::string& path) const;
};

/// Caption-domain mixing ratios (must sum to 1); they tag clips the way the
/// corpus statistics tables tag caption types.
struct CaptionMix {
    double speech = 0.1;
    double sound = 0.7;
    double music = 0.2;
};

struct ContrastiveCorpusConfig {
    std::size_t n_clips = 256;
    std::size_t n_concepts = 32;
    double noise = 0.1;
    double duration_lo_s = 5.0;
    double duration_hi_s = 8.0;
    CaptionMix mix;
    double real_fraction = 0.25;        // tagged metadata only
    double transcript_fraction = 0.25;  // clips whose audio caption is a transcript
    bool compositional = false;         // complementary-halves concept style
    std::uint64_t seed = 1;
};

/// Generates clip records, writes feature files plus manifest.jsonl under
/// out_dir, and returns the manifest. Pure function of (config, seed).
Manifest gen_contrastive_corpus(const ContrastiveCorpusConfig& cfg, const ModelConfig& model_cfg,
                                const std::string& out_dir);

/// One polyphonic mixture specification (kept in the manifest-free SED
/// corpus as annotations + frame features).
struct MixtureSpec {
    std::string clip_id;
    double duration_s = 10.0;
    std::vector<TimedEvent> events;  // ontology leaves; overlaps allowed
    std::vector<double> levels;      // per-event amplitude, parallel to events
    double background_level = 1.0;
    std::size_t smear_frames = 0;
};

struct SedCorpusConfig {
    std::size_t n_clips = 64;
    double duration_s = 10.0;
    std::size_t polyphony_max = 2;
    double event_min_s = 0.8;
    double event_max_s = 3.0;
    double level_lo = 0.9;
    double level_hi = 1.1;
    double noise = 0.05;
    std::size_t smear_frames = 2;
    std::uint64_t seed = 1;
};

struct SedCorpus {
    std::vector<EventTimeline> timelines;
    std::vector<std::string> feature_paths;  // parallel to timelines
};

/// Per-class signature pattern used to synthesize frame features; shared
/// with tests that build oracle detectors.
std::vector<double> sed_class_signature(const std::string& label, std::size_t dim);

/// Frame features of one mixture: sum of active per-event signatures plus
/// background noise, then a causal moving-average smear.
Tensor render_mixture(const MixtureSpec& spec, const Ontology& ont, std::size_t feat_dim,
                      double noise, double rate_hz, PrngStream rng);

/// Generates annotations.jsonl, ontology.json and per-clip frame feature
/// files under out_dir. Pure function of (config, ontology, seed).
SedCorpus gen_sed_corpus(const SedCorpusConfig& cfg, const Ontology& ont, std::size_t feat_dim,
                         double rate_hz, const std::string& out_dir);

/// The 8-leaf default ontology used by the experiment harnesses.
Ontology default_sed_ontology();

}  // namespace peav
