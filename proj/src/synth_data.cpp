#include "peav/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "peav/io.hpp"
#include "peav/numeric.hpp"

namespace fs = std::filesystem;

namespace peav {

StubDescriptor ClipRecord::stub() const {
    StubDescriptor d;
    d.concept_id = concept_id;
    d.duration_s = duration_s;
    d.compositional = compositional;
    d.part_a = part_a;
    d.part_b = part_b;
    return d;
}

std::string Manifest::to_jsonl() const {
    std::ostringstream out;
    for (const ClipRecord& c : clips) {
        nlohmann::json j;
        j["id"] = c.id;
        j["concept"] = c.concept_id;
        j["duration_s"] = c.duration_s;
        j["noise"] = c.noise;
        j["domain"] = c.domain;
        j["source"] = c.source;
        j["has_audio"] = c.has_audio;
        j["has_video"] = c.has_video;
        j["captions"] = c.caption_ids;
        if (c.transcript_id) j["transcript"] = *c.transcript_id;
        if (c.lid) j["lid"] = *c.lid;
        if (c.compositional) {
            j["compositional"] = true;
            j["part_a"] = c.part_a;
            j["part_b"] = c.part_b;
        }
        j["features"] = c.feature_paths;
        out << j.dump() << '\n';
    }
    return out.str();
}

Manifest Manifest::from_jsonl(const std::string& text) {
    Manifest m;
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
            throw format_error("manifest line " + std::to_string(line_no) + ": " + e.what(), 0);
        }
        ClipRecord c;
        c.id = j.at("id").get<std::string>();
        c.concept_id = j.at("concept").get<std::uint64_t>();
        c.duration_s = j.at("duration_s").get<double>();
        c.noise = j.value("noise", 0.0);
        c.domain = j.value("domain", "sound");
        c.source = j.value("source", "synthetic");
        c.has_audio = j.value("has_audio", true);
        c.has_video = j.value("has_video", true);
        c.caption_ids = j.value("captions", std::map<std::string, std::string>{});
        if (j.contains("transcript")) c.transcript_id = j["transcript"].get<std::string>();
        if (j.contains("lid")) c.lid = j["lid"].get<std::string>();
        c.compositional = j.value("compositional", false);
        c.part_a = j.value("part_a", std::uint64_t{0});
        c.part_b = j.value("part_b", std::uint64_t{0});
        c.feature_paths = j.value("features", std::map<std::string, std::string>{});
        m.clips.push_back(std::move(c));
    }
    return m;
}

Manifest Manifest::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw format_error("cannot open manifest '" + path + "'", 0);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_jsonl(ss.str());
}

void Manifest::save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw format_error("cannot write manifest '" + path + "'", 0);
    out << to_jsonl();
}

namespace {

std::string clip_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "clip_%05zu", i);
    return buf;
}

constexpr struct {
    Modality modality;
    const char* role;
} kFeatureRoles[] = {
    {Modality::audio, "audio"},
    {Modality::video, "video"},
    {Modality::caption_audio, "caption_audio"},
    {Modality::caption_video, "caption_video"},
    {Modality::caption_av, "caption_av"},
};

}  // namespace

Manifest gen_contrastive_corpus(const ContrastiveCorpusConfig& cfg, const ModelConfig& model_cfg,
                                const std::string& out_dir) {
    if (cfg.n_concepts < 2) throw config_error("contrastive corpus: need at least 2 concepts");
    if (cfg.n_clips == 0) throw config_error("contrastive corpus: need at least 1 clip");
    const double mix_sum = cfg.mix.speech + cfg.mix.sound + cfg.mix.music;
    if (std::abs(mix_sum - 1.0) > 1e-9) {
        throw config_error("contrastive corpus: caption-type ratios must sum to 1");
    }
    if (cfg.duration_lo_s > cfg.duration_hi_s || cfg.duration_lo_s < 5.0 ||
        cfg.duration_hi_s > 30.0) {
        throw config_error("contrastive corpus: durations must lie in [5, 30] seconds");
    }

    fs::create_directories(fs::path(out_dir) / "features");

    PrngStream root(cfg.seed);
    // Compositional concepts factor into (part_a, part_b) half-ids.
    const auto half_count =
        static_cast<std::uint64_t>(std::max(2.0, std::ceil(std::sqrt(double(cfg.n_concepts)))));

    Manifest m;
    const auto n_real = static_cast<std::size_t>(std::llround(cfg.real_fraction * double(cfg.n_clips)));
    const auto n_speech = static_cast<std::size_t>(std::llround(cfg.mix.speech * double(cfg.n_clips)));
    const auto n_music = static_cast<std::size_t>(std::llround(cfg.mix.music * double(cfg.n_clips)));
    for (std::size_t i = 0; i < cfg.n_clips; ++i) {
        PrngStream clip_rng = root.substream(fnv1a64(clip_name(i).c_str(), clip_name(i).size()));
        ClipRecord c;
        c.id = clip_name(i);
        c.concept_id = i % cfg.n_concepts;  // balanced coverage
        c.duration_s = std::round(clip_rng.next_uniform(cfg.duration_lo_s, cfg.duration_hi_s) * 10.0) / 10.0;
        c.noise = cfg.noise;
        c.domain = i < n_speech ? "speech" : (i < n_speech + n_music ? "music" : "sound");
        c.source = i < n_real ? "real" : "synthetic";
        c.compositional = cfg.compositional;
        if (cfg.compositional) {
            c.part_a = c.concept_id / half_count;
            c.part_b = c.concept_id % half_count;
        }
        const std::string concept_str = std::to_string(c.concept_id);
        c.caption_ids = {{"audio", "cap-a-" + concept_str},
                         {"video", "cap-v-" + concept_str},
                         {"av", "cap-av-" + concept_str}};
        const bool transcript = clip_rng.next_double() < cfg.transcript_fraction;
        if (transcript) {
            c.transcript_id = "tr-" + concept_str;
            c.lid = "en";
        }

        for (const auto& fr : kFeatureRoles) {
            // Transcript clips replace the audio caption with the transcript
            // stub, the way speech items carry transcripts instead.
            Modality mod = fr.modality;
            if (mod == Modality::caption_audio && transcript) {
                mod = Modality::caption_transcript;
            }
            PrngStream noise_rng = clip_rng.substream(static_cast<std::uint64_t>(fr.modality) + 100);
            TokenSequence seq = stub_features(c.stub(), mod, model_cfg, cfg.noise, noise_rng);
            std::string rel = std::string("features/") + c.id + "." + fr.role + ".peav";
            write_feature_file((fs::path(out_dir) / rel).string(), seq.tokens);
            c.feature_paths[fr.role] = rel;
        }
        m.clips.push_back(std::move(c));
    }
    m.save((fs::path(out_dir) / "manifest.jsonl").string());
    return m;
}

std::vector<double> sed_class_signature(const std::string& label, std::size_t dim) {
    PrngStream rng = PrngStream(0x5EDC0DEull).substream(fnv1a64(label.c_str(), label.size()));
    std::vector<double> sig(dim);
    for (double& v : sig) v = rng.next_gaussian();
    const double norm = std::max(l2_norm(sig), 1e-12);
    for (double& v : sig) v /= norm;
    return sig;
}

Tensor render_mixture(const MixtureSpec& spec, const Ontology& ont, std::size_t feat_dim,
                      double noise, double rate_hz, PrngStream rng) {
    EventTimeline t{spec.clip_id, spec.duration_s, spec.events};
    t.validate();
    const std::size_t l_max = t.frame_count(rate_hz);
    if (spec.smear_frames >= l_max) {
        throw domain_error("render_mixture: smear_frames must be smaller than the frame count");
    }
    Tensor mask = t.rasterize_mask(rate_hz);
    Tensor x = Tensor::zeros({l_max, feat_dim});
    std::vector<std::vector<double>> sigs;
    for (const TimedEvent& e : spec.events) {
        ont.resolve(e.label);  // unknown labels fail loudly
        sigs.push_back(sed_class_signature(e.label, feat_dim));
    }
    for (std::size_t l = 0; l < l_max; ++l) {
        for (std::size_t k = 0; k < spec.events.size(); ++k) {
            if (mask.at2(l, k) == 1.0) {
                const double level = k < spec.levels.size() ? spec.levels[k] : 1.0;
                for (std::size_t j = 0; j < feat_dim; ++j) x.at2(l, j) += level * sigs[k][j];
            }
        }
        for (std::size_t j = 0; j < feat_dim; ++j) {
            x.at2(l, j) += spec.background_level * noise * rng.next_gaussian();
        }
    }
    if (spec.smear_frames > 0) {
        // causal moving average over the trailing smear window
        Tensor smeared = Tensor::zeros({l_max, feat_dim});
        const std::size_t w = spec.smear_frames + 1;
        for (std::size_t l = 0; l < l_max; ++l) {
            const std::size_t lo = l + 1 >= w ? l + 1 - w : 0;
            const double inv = 1.0 / double(l - lo + 1);
            for (std::size_t j = 0; j < feat_dim; ++j) {
                double acc = 0.0;
                for (std::size_t p = lo; p <= l; ++p) acc += x.at2(p, j);
                smeared.at2(l, j) = acc * inv;
            }
        }
        return smeared;
    }
    return x;
}

SedCorpus gen_sed_corpus(const SedCorpusConfig& cfg, const Ontology& ont, std::size_t feat_dim,
                         double rate_hz, const std::string& out_dir) {
    if (cfg.polyphony_max < 1) throw config_error("sed corpus: polyphony_max must be >= 1");
    const std::vector<std::string> leaves = ont.leaves();
    if (leaves.empty()) throw config_error("sed corpus: ontology has no leaves");

    fs::create_directories(fs::path(out_dir) / "features");
    PrngStream root(cfg.seed);

    SedCorpus corpus;
    for (std::size_t i = 0; i < cfg.n_clips; ++i) {
        const std::string id = "sed_" + clip_name(i);
        PrngStream clip_rng = root.substream(fnv1a64(id.c_str(), id.size()));

        MixtureSpec spec;
        spec.clip_id = id;
        spec.duration_s = cfg.duration_s;
        spec.smear_frames = cfg.smear_frames;
        const std::size_t n_events = clip_rng.next_index(cfg.polyphony_max + 1);
        for (std::size_t k = 0; k < n_events; ++k) {
            TimedEvent e;
            e.label = leaves[clip_rng.next_index(leaves.size())];
            const double len = clip_rng.next_uniform(cfg.event_min_s,
                                                     std::min(cfg.event_max_s, cfg.duration_s));
            const double onset = clip_rng.next_uniform(0.0, cfg.duration_s - len);
            e.onset_s = std::round(onset * 100.0) / 100.0;
            e.offset_s = std::min(cfg.duration_s, e.onset_s + std::round(len * 100.0) / 100.0);
            spec.events.push_back(e);
            spec.levels.push_back(clip_rng.next_uniform(cfg.level_lo, cfg.level_hi));
        }
        spec.background_level = 1.0;

        Tensor features = render_mixture(spec, ont, feat_dim, cfg.noise, rate_hz,
                                         clip_rng.substream(500));
        std::string rel = "features/" + id + ".audio.peav";
        write_feature_file((fs::path(out_dir) / rel).string(), features);

        corpus.timelines.push_back({id, spec.duration_s, spec.events});
        corpus.feature_paths.push_back(rel);
    }
    save_timelines((fs::path(out_dir) / "annotations.jsonl").string(), corpus.timelines);
    ont.save((fs::path(out_dir) / "ontology.json").string());
    return corpus;
}

Ontology default_sed_ontology() {
    std::vector<OntologyNode> nodes = {
        {"speech", "speech", std::nullopt, {}},
        {"male_speech", "male speech", "speech", {"man speaking"}},
        {"female_speech", "female speech", "speech", {"woman speaking"}},
        {"music", "music", std::nullopt, {}},
        {"guitar", "guitar", "music", {"strumming"}},
        {"piano", "piano", "music", {"keys"}},
        {"dog", "dog", std::nullopt, {}},
        {"bark", "bark", "dog", {"barking", "woof"}},
        {"vehicle", "vehicle", std::nullopt, {}},
        {"car_horn", "car horn", "vehicle", {"honk"}},
        {"siren", "siren", "vehicle", {"alarm wail"}},
        {"rain", "rain", std::nullopt, {"rainfall"}},
    };
    return Ontology(std::move(nodes));
}

}  // namespace peav
