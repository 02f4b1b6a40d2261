// Command-line entry point: corpus generation, training, evaluation and the
// experiment harnesses, all driven by one JSON config plus --set overrides.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "config_schema.hpp"
#include "peav/collective.hpp"
#include "peav/numeric.hpp"
#include "peav/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace peav;

namespace {

// --- config machinery -------------------------------------------------------

// Minimal JSON-Schema interpreter covering the subset the shipped schema
// uses: type, enum, properties, additionalProperties, items, numeric bounds.
void validate_against_schema(const json& value, const json& schema, const std::string& where) {
    auto fail = [&](const std::string& msg) {
        throw config_error("config" + (where.empty() ? "" : " at " + where) + ": " + msg);
    };
    if (schema.contains("type")) {
        const std::string type = schema["type"].get<std::string>();
        const bool ok = (type == "object" && value.is_object()) ||
                        (type == "array" && value.is_array()) ||
                        (type == "string" && value.is_string()) ||
                        (type == "boolean" && value.is_boolean()) ||
                        (type == "integer" && value.is_number_integer()) ||
                        (type == "number" && value.is_number());
        if (!ok) fail("expected " + type);
    }
    if (schema.contains("enum")) {
        bool ok = false;
        for (const auto& allowed : schema["enum"]) ok = ok || allowed == value;
        if (!ok) fail("value " + value.dump() + " not in " + schema["enum"].dump());
    }
    if (value.is_number()) {
        const double x = value.get<double>();
        if (schema.contains("minimum") && x < schema["minimum"].get<double>()) fail("below minimum");
        if (schema.contains("maximum") && x > schema["maximum"].get<double>()) fail("above maximum");
        if (schema.contains("exclusiveMinimum") && x <= schema["exclusiveMinimum"].get<double>()) {
            fail("must exceed " + schema["exclusiveMinimum"].dump());
        }
    }
    if (value.is_object() && schema.contains("properties")) {
        const json& props = schema["properties"];
        const bool closed = schema.value("additionalProperties", json(true)) == json(false);
        for (const auto& [key, sub] : value.items()) {
            if (props.contains(key)) {
                validate_against_schema(sub, props[key], where.empty() ? key : where + "." + key);
            } else if (closed) {
                fail("unknown key '" + key + "'");
            }
        }
    }
    if (value.is_array() && schema.contains("items")) {
        for (std::size_t i = 0; i < value.size(); ++i) {
            validate_against_schema(value[i], schema["items"], where + "[" + std::to_string(i) + "]");
        }
    }
}

json load_config(const std::string& path, const std::vector<std::string>& overrides) {
    json config = json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw config_error("cannot open config '" + path + "'");
        try {
            in >> config;
        } catch (const json::exception& e) {
            throw config_error("config '" + path + "': " + e.what());
        }
    }
    for (const std::string& kv : overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw config_error("--set expects key=value, got '" + kv + "'");
        const std::string key = kv.substr(0, eq);
        const std::string raw = kv.substr(eq + 1);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::exception&) {
            value = raw;  // bare strings need no quotes
        }
        json* at = &config;
        std::size_t begin = 0;
        while (true) {
            auto dot = key.find('.', begin);
            const std::string part = key.substr(begin, dot - begin);
            if (part.empty()) throw config_error("--set key '" + key + "' is malformed");
            if (dot == std::string::npos) {
                (*at)[part] = value;
                break;
            }
            at = &(*at)[part];
            begin = dot + 1;
        }
    }
    if (const char* env_seed = std::getenv("PEAV_SEED")) {
        try {
            config["seed"] = std::stoull(env_seed);
        } catch (const std::exception&) {
            throw config_error("PEAV_SEED must be an unsigned integer");
        }
    }
    validate_against_schema(config, json::parse(kConfigSchemaJson), "");
    return config;
}

std::string config_hash(const json& config) {
    const std::string dump = config.dump();
    const std::uint64_t h = fnv1a64(dump.data(), dump.size());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw format_error("cannot write '" + path + "'", 0);
    out << text;
    if (!out) throw format_error("short write to '" + path + "'", 0);
}

ModelConfig model_config_of(const json& config) {
    const std::string scale = config.value("scale", "TOY");
    auto s = ModelConfig::scale_from_name(scale);
    if (!s) throw config_error("unknown scale '" + scale + "'");
    ModelConfig cfg = ModelConfig::preset(*s);
    return cfg;
}

std::uint64_t seed_of(const json& config) { return config.value("seed", std::uint64_t{1}); }

PairRegistry registry_of(const json& config) {
    if (config.contains("pairs")) return PairRegistry::from_json(config["pairs"].dump());
    const std::string preset = config.value("registry", "PRETRAIN_8");
    if (preset == "PRETRAIN_8") return PairRegistry::pretrain8();
    if (preset == "FINETUNE_10") return PairRegistry::finetune10();
    throw config_error("unknown registry preset '" + preset + "'");
}

ContrastiveCorpusConfig corpus_config_of(const json& config) {
    const json data = config.value("data", json::object());
    ContrastiveCorpusConfig c;
    c.n_clips = data.value("n_clips", c.n_clips);
    c.n_concepts = data.value("n_concepts", c.n_concepts);
    c.noise = data.value("noise", c.noise);
    c.duration_lo_s = data.value("duration_lo_s", c.duration_lo_s);
    c.duration_hi_s = data.value("duration_hi_s", c.duration_hi_s);
    c.mix.speech = data.value("mix_speech", c.mix.speech);
    c.mix.sound = data.value("mix_sound", c.mix.sound);
    c.mix.music = data.value("mix_music", c.mix.music);
    c.real_fraction = data.value("real_fraction", c.real_fraction);
    c.transcript_fraction = data.value("transcript_fraction", c.transcript_fraction);
    c.compositional = data.value("compositional", false);
    c.seed = seed_of(config);
    return c;
}

SedCorpusConfig sed_config_of(const json& config) {
    const json data = config.value("data", json::object());
    SedCorpusConfig c;
    c.n_clips = data.value("n_clips", c.n_clips);
    c.duration_s = data.value("duration_s", c.duration_s);
    c.polyphony_max = data.value("polyphony_max", c.polyphony_max);
    c.noise = data.value("noise", c.noise);
    c.smear_frames = data.value("smear_frames", c.smear_frames);
    c.event_min_s = data.value("event_min_s", c.event_min_s);
    c.event_max_s = data.value("event_max_s", c.event_max_s);
    c.seed = seed_of(config);
    return c;
}

std::string data_dir_of(const json& config, const std::string& out_dir) {
    const json data = config.value("data", json::object());
    return data.value("dir", out_dir);
}

sed::PsdsParams psds_params_of(const json& config) {
    const json eval = config.value("eval", json::object());
    sed::PsdsParams p;
    p.rho_dtc = eval.value("rho_dtc", p.rho_dtc);
    p.rho_gtc = eval.value("rho_gtc", p.rho_gtc);
    p.alpha_st = eval.value("alpha_st", p.alpha_st);
    p.alpha_ct = eval.value("alpha_ct", p.alpha_ct);
    p.e_max = eval.value("e_max", p.e_max);
    p.thresholds = sed::PsdsParams::default_thresholds(
        eval.value("n_thresholds", std::size_t{50}));
    return p;
}

// --- shared pieces -----------------------------------------------------------

struct Workspace {
    json config;
    std::string hash;
    std::string out_dir;
    ModelConfig model_cfg;
};

Workspace make_workspace(const json& config, const std::string& out_dir) {
    Workspace w{config, config_hash(config), out_dir, model_config_of(config)};
    fs::create_directories(out_dir);
    return w;
}

EmbeddingBundle eval_bundle(const std::vector<EncodedClip>& encoded,
                            const TrainableParams& trainable) {
    std::vector<std::size_t> all(encoded.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return forward_bundle(encoded, all, trainable, true).bundle;
}

// Deterministic prompt encoder for zero-shot classification: a prompt maps
// to the concept named inside it, with a small template-keyed offset.
std::function<std::vector<double>(const std::string&)> make_prompt_encoder(
    const std::map<std::string, std::uint64_t>& concepts_by_name, const ModelConfig& cfg,
    const ModelParams& params, const TrainableParams& trainable) {
    return [=, &params, &trainable](const std::string& prompt) {
        const std::uint64_t* concept_id = nullptr;
        for (const auto& [name, id] : concepts_by_name) {
            if (prompt.find(name) != std::string::npos) {
                concept_id = &id;
                break;
            }
        }
        if (!concept_id) throw domain_error("prompt names no known class: '" + prompt + "'");
        StubDescriptor d;
        d.concept_id = *concept_id;
        d.duration_s = 1.0;
        TokenSequence raw = stub_features(d, Modality::caption_audio, cfg, 0.0, PrngStream(0));
        // tiny template-keyed offset so distinct templates differ
        PrngStream jitter(fnv1a64(prompt.data(), prompt.size()));
        for (std::size_t i = 0; i < raw.tokens.size(); ++i) {
            raw.tokens[i] += 1e-3 * jitter.next_gaussian();
        }
        TokenSequence projected = project_text_tokens(raw, params);
        std::vector<double> pooled = attn_pool(projected.tokens, trainable.pool_q_t);
        Tensor row = Tensor::from_data({1, pooled.size()}, pooled);
        Tensor h = project_and_normalize(row, trainable.head_ta);
        return h.row(0);
    };
}

std::string metrics_to_csv(const std::string& hash, const RetrievalMetrics& metrics) {
    std::ostringstream out;
    out.precision(10);
    out << "# config_hash=" << hash << '\n';
    out << "task,direction,metric,value\n";
    for (const auto& [direction, metric, value] : metrics.rows) {
        const bool joint = direction.find('+') != std::string::npos;
        out << (joint ? "joint" : "retrieval") << ',' << direction << ',' << metric << ','
            << value << '\n';
    }
    return out.str();
}

json metrics_to_json(const std::string& hash, const RetrievalMetrics& metrics) {
    json out;
    out["config_hash"] = hash;
    json rows = json::array();
    for (const auto& [direction, metric, value] : metrics.rows) {
        rows.push_back({{"direction", direction}, {"metric", metric}, {"value", value}});
    }
    out["metrics"] = rows;
    return out;
}

// --- subcommands -------------------------------------------------------------

int run_gen_data(const Workspace& w) {
    const json data = w.config.value("data", json::object());
    const std::string kind = data.value("kind", "contrastive");
    const std::string dir = data_dir_of(w.config, w.out_dir);
    fs::create_directories(dir);
    if (kind == "contrastive") {
        Manifest m = gen_contrastive_corpus(corpus_config_of(w.config), w.model_cfg, dir);
        std::cout << "wrote " << m.clips.size() << " clips to " << dir << "\n";
    } else if (kind == "sed") {
        Ontology ont = default_sed_ontology();
        SedCorpus corpus = gen_sed_corpus(sed_config_of(w.config), ont,
                                          w.model_cfg.feat_dim_audio, w.model_cfg.audio_hz, dir);
        std::cout << "wrote " << corpus.timelines.size() << " clips to " << dir << "\n";
    } else {
        throw config_error("unknown data.kind '" + kind + "'");
    }
    return 0;
}

int run_train(const Workspace& w) {
    const json train = w.config.value("train", json::object());
    const std::string mode = train.value("mode", "contrastive");
    const std::string dir = data_dir_of(w.config, w.out_dir);
    const std::uint64_t seed = seed_of(w.config);
    const std::string ckpt_path = (fs::path(w.out_dir) / "checkpoint.bin").string();
    const std::string losses_path = (fs::path(w.out_dir) / "losses.csv").string();

    ModelParams model = init_model(w.model_cfg, PrngStream(seed));
    TrainedState state;
    state.trainable = init_trainable(w.model_cfg, PrngStream(seed));
    state.registry = registry_of(w.config);

    // initialization is the first last-good checkpoint; a numeric abort
    // leaves it in place
    save_state(ckpt_path, w.config.dump(), w.model_cfg, state);

    TrainLog log;
    if (mode == "contrastive") {
        if (!fs::exists(fs::path(dir) / "manifest.jsonl")) {
            throw config_error("train: corpus not found under '" + dir + "'");
        }
        auto clips = load_corpus(dir);
        auto encoded = encode_corpus(clips, w.model_cfg, model);
        TrainOptions opt;
        opt.steps = train.value("steps", opt.steps);
        opt.batch = train.value("batch", opt.batch);
        opt.lr = train.value("lr", opt.lr);
        opt.momentum = train.value("momentum", opt.momentum);
        opt.warmup_steps = train.value("warmup_steps", opt.warmup_steps);
        opt.log_every = train.value("log_every", opt.log_every);
        opt.negated_similarity_sign = train.value("negated_similarity_sign", false);
        opt.seed = seed;
        log = train_contrastive(encoded, state.trainable, state.registry, opt);
    } else if (mode == "frame") {
        if (!fs::exists(fs::path(dir) / "annotations.jsonl")) {
            throw config_error("train: SED corpus not found under '" + dir + "'");
        }
        Ontology ont = Ontology::load((fs::path(dir) / "ontology.json").string());
        SedCorpus corpus;
        corpus.timelines = load_timelines((fs::path(dir) / "annotations.jsonl").string());
        for (const EventTimeline& t : corpus.timelines) {
            corpus.feature_paths.push_back("features/" + t.clip_id + ".audio.peav");
        }
        auto encoded = encode_sed_corpus(corpus, dir, w.model_cfg, model);
        auto text = sed_text_embeddings(ont, w.model_cfg, model, state.trainable);
        FrameTrainOptions opt;
        opt.steps = train.value("steps", opt.steps);
        opt.batch = train.value("batch", opt.batch);
        opt.lr = train.value("lr", opt.lr);
        opt.momentum = train.value("momentum", opt.momentum);
        opt.p_local = train.value("p_local", opt.p_local);
        opt.log_every = train.value("log_every", opt.log_every);
        opt.seed = seed;
        FrameTrainLog flog = train_frame(encoded, text, ont, state.trainable, state.frame_head, opt);
        log = flog.log;
    } else {
        throw config_error("unknown train.mode '" + mode + "'");
    }

    save_state(ckpt_path, w.config.dump(), w.model_cfg, state);
    write_text(losses_path, "# config_hash=" + w.hash + "\n" + log.to_csv());
    std::cout << "trained " << mode << ": initial " << log.initial_loss << " final "
              << log.final_loss << "\n";
    return 0;
}

int run_eval_retrieval(const Workspace& w, const std::string& checkpoint) {
    const json eval = w.config.value("eval", json::object());
    const std::string dir = data_dir_of(w.config, w.out_dir);
    const std::uint64_t seed = seed_of(w.config);
    ModelParams model = init_model(w.model_cfg, PrngStream(seed));
    TrainedState state = load_state(checkpoint, w.model_cfg);

    auto clips = load_corpus(dir);
    auto encoded = encode_corpus(clips, w.model_cfg, model);
    EmbeddingBundle bundle = eval_bundle(encoded, state.trainable);

    std::vector<std::size_t> k_values = eval.value("k", std::vector<std::size_t>{1, 5});
    const double sharpen = eval.value("dsl_sharpen", 10.0);
    RetrievalMetrics metrics = eval_retrieval(clips, bundle, k_values, sharpen);

    // zero-shot prompt classification over the corpus concepts
    std::map<std::string, std::uint64_t> concepts;
    std::vector<std::size_t> labels;
    std::vector<std::string> class_names;
    {
        std::map<std::uint64_t, std::size_t> index_of;
        for (const LoadedClip& c : clips) {
            auto [it, fresh] = index_of.try_emplace(c.rec.concept_id, class_names.size());
            if (fresh) {
                std::string name = "concept_" + std::to_string(c.rec.concept_id);
                class_names.push_back(name);
                concepts[name] = c.rec.concept_id;
            }
            labels.push_back(it->second);
        }
    }
    std::vector<std::string> templates = eval.value(
        "templates", std::vector<std::string>{"a recording of {c}", "the sound of {c}"});
    const double accuracy =
        retrieval::classify_zero_shot(bundle.get(StreamTag::A), class_names, templates,
                                      make_prompt_encoder(concepts, w.model_cfg, model,
                                                          state.trainable),
                                      labels);
    metrics.add("A->class", "top1_acc", accuracy);

    write_text((fs::path(w.out_dir) / "metrics.csv").string(), metrics_to_csv(w.hash, metrics));
    write_text((fs::path(w.out_dir) / "metrics.json").string(),
               metrics_to_json(w.hash, metrics).dump(2) + "\n");
    std::cout << "retrieval metrics written to " << w.out_dir << "\n";
    return 0;
}

int run_eval_sed(const Workspace& w, const std::string& checkpoint) {
    const json eval = w.config.value("eval", json::object());
    const std::string dir = data_dir_of(w.config, w.out_dir);
    const std::uint64_t seed = seed_of(w.config);
    ModelParams model = init_model(w.model_cfg, PrngStream(seed));
    TrainedState state = load_state(checkpoint, w.model_cfg);

    Ontology ont = Ontology::load((fs::path(dir) / "ontology.json").string());
    SedCorpus corpus;
    corpus.timelines = load_timelines((fs::path(dir) / "annotations.jsonl").string());
    for (const EventTimeline& t : corpus.timelines) {
        corpus.feature_paths.push_back("features/" + t.clip_id + ".audio.peav");
    }
    const std::size_t median_width = eval.value("median_width", std::size_t{9});
    const double segment_s = eval.value("segment_s", 1.0);
    std::vector<std::string> classes = ont.leaves();

    // model scores by default; an external predictions file (same JSONL
    // schema this command emits) can be scored instead
    std::vector<sed::ScoreTrack> tracks;
    if (eval.contains("predictions")) {
        tracks = sed::load_tracks(eval["predictions"].get<std::string>());
        for (auto& t : tracks) t.scores = sed::median_filter(t.scores, median_width);
    } else {
        auto encoded = encode_sed_corpus(corpus, dir, w.model_cfg, model);
        auto text = sed_text_embeddings(ont, w.model_cfg, model, state.trainable);
        tracks = score_sed(encoded, text, classes, state.trainable, state.frame_head,
                           median_width, w.model_cfg.audio_hz);
        sed::save_tracks((fs::path(w.out_dir) / "predictions.jsonl").string(), tracks);
    }

    sed::PsdsParams params = psds_params_of(w.config);
    json report;
    report["config_hash"] = w.hash;
    report["median_width"] = median_width;
    report["psds1_a"] = sed::psds1(tracks, corpus.timelines, params, sed::PsdsMode::all_classes).score;
    report["psds1_t"] = sed::psds1(tracks, corpus.timelines, params, sed::PsdsMode::target_only).score;
    report["auroc"] = sed::segment_auroc(tracks, corpus.timelines, segment_s, true);
    json per_class = json::object();
    for (const std::string& cls : classes) {
        std::vector<sed::ScoreTrack> subset;
        for (const auto& t : tracks) {
            if (t.class_id == cls) subset.push_back(t);
        }
        std::size_t n_events = 0;
        for (const auto& t : corpus.timelines) {
            for (const auto& e : t.events) n_events += (e.label == cls) ? 1 : 0;
        }
        json entry{{"gt_events", n_events}};
        try {
            entry["auroc"] = sed::segment_auroc(subset, corpus.timelines, segment_s, false);
        } catch (const domain_error&) {
            entry["auroc"] = nullptr;  // class never occurs or never rests
        }
        per_class[cls] = std::move(entry);
    }
    report["per_class"] = std::move(per_class);

    write_text((fs::path(w.out_dir) / "metrics.json").string(), report.dump(2) + "\n");
    std::cout << "psds1_a=" << report["psds1_a"] << " psds1_t=" << report["psds1_t"]
              << " auroc=" << report["auroc"] << "\n";
    return 0;
}

int run_ablate_pairs(const Workspace& w) {
    const json train = w.config.value("train", json::object());
    const std::string dir = data_dir_of(w.config, w.out_dir);
    const std::uint64_t seed = seed_of(w.config);

    // default rows mirror the coverage ablation's structure
    std::vector<std::vector<std::string>> rows = {
        {"A-AT"},
        {"A-AT", "V-VT"},
        {"A-AT", "V-VT", "AV-AVT"},
        {"A-V", "A-AT", "V-VT", "AV-AVT"},
        {"A-V", "A-AT", "V-AT", "V-VT", "AV-AT", "AV-AVT"},
        {"A-AT", "A-V", "A-AVT", "AV-AT", "AV-AVT", "V-AT", "V-VT", "V-AVT"},
    };
    if (w.config.contains("ablate") && w.config["ablate"].contains("rows")) {
        rows.clear();
        for (const auto& row : w.config["ablate"]["rows"]) {
            rows.push_back(row.get<std::vector<std::string>>());
        }
    }

    if (!fs::exists(fs::path(dir) / "manifest.jsonl")) {
        throw config_error("ablate-pairs: corpus not found under '" + dir + "'");
    }
    auto clips = load_corpus(dir);

    PairRegistry base = PairRegistry::pretrain8();
    auto pair_by_name = [&](const std::string& name) -> LossPairSpec {
        for (const LossPairSpec& p : base.pairs) {
            if (p.name() == name) return p;
        }
        throw config_error("ablate-pairs: unknown pair '" + name + "'");
    };

    json report;
    report["config_hash"] = w.hash;
    json out_rows = json::array();
    std::ostringstream csv;
    csv.precision(10);
    csv << "# config_hash=" << w.hash << '\n';
    csv << "row,pairs,seed,T->A r@1,T->V r@1,A->V r@1,avg\n";

    for (std::size_t row_idx = 0; row_idx < rows.size(); ++row_idx) {
        const std::uint64_t row_seed = seed + row_idx;
        ModelParams model = init_model(w.model_cfg, PrngStream(row_seed));
        auto encoded = encode_corpus(clips, w.model_cfg, model);
        TrainableParams trainable = init_trainable(w.model_cfg, PrngStream(row_seed));
        std::vector<LossPairSpec> specs;
        for (const std::string& name : rows[row_idx]) specs.push_back(pair_by_name(name));
        PairRegistry registry = PairRegistry::custom(std::move(specs));

        TrainOptions opt;
        opt.steps = train.value("steps", std::size_t{800});
        opt.batch = train.value("batch", std::size_t{64});
        opt.lr = train.value("lr", 0.05);
        opt.warmup_steps = train.value("warmup_steps", std::size_t{50});
        opt.seed = row_seed;
        train_contrastive(encoded, trainable, registry, opt);

        std::vector<std::size_t> all(encoded.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        EmbeddingBundle bundle = forward_bundle(encoded, all, trainable, false).bundle;
        RetrievalMetrics metrics = eval_retrieval(clips, bundle, {1}, 10.0);
        const double ta = *metrics.find("T->A", "r@1");
        const double tv = *metrics.find("T->V", "r@1");
        const double av = *metrics.find("A->V", "r@1");
        const double avg = (ta + tv + av) / 3.0;

        json row_json{{"pairs", rows[row_idx]},
                      {"seed", row_seed},
                      {"T->A r@1", ta},
                      {"T->V r@1", tv},
                      {"A->V r@1", av},
                      {"avg", avg}};
        out_rows.push_back(std::move(row_json));
        csv << row_idx << ',';
        for (std::size_t i = 0; i < rows[row_idx].size(); ++i) {
            if (i) csv << ' ';
            csv << rows[row_idx][i];
        }
        csv << ',' << row_seed << ',' << ta << ',' << tv << ',' << av << ',' << avg << '\n';
        std::cout << "row " << row_idx << " avg r@1 " << avg << "\n";
    }
    report["rows"] = std::move(out_rows);
    write_text((fs::path(w.out_dir) / "report.json").string(), report.dump(2) + "\n");
    write_text((fs::path(w.out_dir) / "metrics.csv").string(), csv.str());
    return 0;
}

int run_bench_gather(const Workspace& w) {
    const json bench = w.config.value("bench", json::object());
    const std::size_t world = bench.value("world_size", std::size_t{8});
    const std::size_t pairs = bench.value("pairs", std::size_t{4});
    const std::size_t batch = bench.value("batch", std::size_t{64});
    const std::size_t dim = bench.value("dim", std::size_t{32});
    const double latency = bench.value("latency_per_call_s", 50e-6);
    const double bandwidth = bench.value("floats_per_second", 2.5e9);

    GatherBenchReport model = bench_gather(world, pairs, batch, dim, latency, bandwidth);

    // numeric equivalence of the two strategies on random embeddings
    PrngStream rng(seed_of(w.config));
    EmbeddingBundle global;
    auto rows = [&](std::uint64_t key) {
        PrngStream r = rng.substream(key);
        Tensor t = Tensor::zeros({batch, dim});
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = r.next_gaussian();
        return l2_normalize(t, 1);
    };
    global.h_a = rows(1);
    global.h_v = rows(2);
    global.h_av = rows(3);
    global.h_ta = rows(4);
    global.h_tv = rows(5);
    global.h_tav = rows(6);
    global.h_at = rows(7);
    global.h_vt = rows(8);
    PairRegistry registry = PairRegistry::finetune10();
    if (pairs > registry.pairs.size()) {
        throw config_error("bench-gather: at most 10 pairs are defined");
    }
    registry.preset = RegistryPreset::CUSTOM;
    registry.pairs.resize(pairs);
    ShardedBatch sharded = ShardedBatch::split(global, world);

    CollectiveLedger naive_ledger, packed_ledger;
    GatherResult naive = gather_naive(sharded, registry, naive_ledger);
    GatherResult packed = gather_packed(sharded, registry, packed_ledger);
    double max_loss_diff = std::abs(naive.total - packed.total);
    for (std::size_t i = 0; i < naive.per_pair.size(); ++i) {
        max_loss_diff = std::max(max_loss_diff, std::abs(naive.per_pair[i] - packed.per_pair[i]));
    }

    json report = json::parse(model.to_json());
    report["config_hash"] = w.hash;
    report["measured"] = {{"naive_calls", naive_ledger.gather_calls},
                          {"packed_calls", packed_ledger.gather_calls},
                          {"naive_payload_floats", naive_ledger.payload_floats},
                          {"packed_payload_floats", packed_ledger.payload_floats},
                          {"max_loss_diff", max_loss_diff}};
    write_text((fs::path(w.out_dir) / "report.json").string(), report.dump(2) + "\n");
    std::cout << "naive calls " << naive_ledger.gather_calls << ", packed calls "
              << packed_ledger.gather_calls << ", max loss diff " << max_loss_diff << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-pair sigmoid contrastive training and evaluation at desk scale"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", checkpoint;
    std::vector<std::string> overrides;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON experiment config");
        sub->add_option("--set", overrides, "config override key=value (dotted keys)");
        sub->add_option("--out-dir", out_dir, "output directory");
        return sub;
    };

    CLI::App* gen = add_common(app.add_subcommand("gen-data", "generate a synthetic corpus"));
    CLI::App* train = add_common(app.add_subcommand("train", "train the read-out parameters"));
    CLI::App* eval_ret =
        add_common(app.add_subcommand("eval-retrieval", "zero-shot retrieval metrics"));
    eval_ret->add_option("--checkpoint", checkpoint, "checkpoint path");
    CLI::App* eval_sed = add_common(app.add_subcommand("eval-sed", "PSDS / AUROC scoring"));
    eval_sed->add_option("--checkpoint", checkpoint, "checkpoint path");
    CLI::App* ablate =
        add_common(app.add_subcommand("ablate-pairs", "registry-subset ablation table"));
    CLI::App* bench =
        add_common(app.add_subcommand("bench-gather", "packed vs naive collective model"));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return 2;
    }

    try {
        Workspace w = make_workspace(load_config(config_path, overrides), out_dir);
        if (checkpoint.empty()) checkpoint = (fs::path(out_dir) / "checkpoint.bin").string();
        if (gen->parsed()) return run_gen_data(w);
        if (train->parsed()) return run_train(w);
        if (eval_ret->parsed()) return run_eval_retrieval(w, checkpoint);
        if (eval_sed->parsed()) return run_eval_sed(w, checkpoint);
        if (ablate->parsed()) return run_ablate_pairs(w);
        if (bench->parsed()) return run_bench_gather(w);
        return 2;
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const param_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const format_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    } catch (const domain_error& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
