#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "peav/io.hpp"
#include "peav/model.hpp"
#include "peav/objective.hpp"
#include "peav/retrieval_eval.hpp"
#include "peav/sed_eval.hpp"
#include "peav/synth_data.hpp"

namespace peav {

/// A manifest record together with its feature tensors read back from disk
/// (f32 precision: the files are the source of truth, not fresh stubs).
struct LoadedClip {
    ClipRecord rec;
    Tensor feat_audio, feat_video;
    Tensor feat_cap_audio, feat_cap_video, feat_cap_av;
};

std::vector<LoadedClip> load_corpus(const std::string& dir);

/// Frozen-tower outputs cached once per clip; training touches only the
/// trainable read-out on top of these.
struct EncodedClip {
    Tensor tokens_a, tokens_v, tokens_av;   // (L+1) x C_e, CLS at row 0
    Tensor text_a, text_v, text_av;         // L_t x C_e
};

EncodedClip encode_clip(const LoadedClip& clip, const ModelConfig& cfg,
                        const ModelParams& params);
std::vector<EncodedClip> encode_corpus(const std::vector<LoadedClip>& clips,
                                       const ModelConfig& cfg, const ModelParams& params);

/// Forward pass of one batch through pooling, heads and (optionally) the
/// joint projections, with every cache the backward pass needs.
struct BundleForward {
    std::vector<std::size_t> batch;  // indices into the encoded corpus
    EmbeddingBundle bundle;
    PooledStreams pooled;
    EmbeddingBundle pre_norm;  // un-normalized head outputs per base stream
    std::map<StreamTag, std::vector<std::vector<double>>> pool_weights;
    bool with_joints = false;
    Tensor joint_at_u, joint_at_concat;
    Tensor joint_vt_u, joint_vt_concat;
};

BundleForward forward_bundle(const std::vector<EncodedClip>& clips,
                             const std::vector<std::size_t>& batch,
                             const TrainableParams& params, bool with_joints);

/// Gradients for every trainable tensor, keyed by TrainableParams names.
using TrainableGrads = std::map<std::string, Tensor>;

TrainableGrads backward_bundle(const BundleForward& fwd, const std::vector<EncodedClip>& clips,
                               const TrainableParams& params, const StreamGrads& bundle_grads);

struct TrainOptions {
    std::size_t steps = 2000;
    std::size_t batch = 64;
    double lr = 0.05;
    double momentum = 0.9;
    std::uint64_t seed = 1;
    std::size_t warmup_steps = 50;
    std::size_t log_every = 1;
    bool negated_similarity_sign = false;
};

struct TrainLog {
    std::vector<std::string> columns;        // step, total, per-pair names
    std::vector<std::vector<double>> rows;
    double initial_loss = 0.0;
    double final_loss = 0.0;

    std::string to_csv() const;
};

/// Multi-pair contrastive training of the read-out parameters and every
/// pair's (alpha, beta). Deterministic for a fixed seed. Throws
/// domain_error on a non-finite loss.
TrainLog train_contrastive(const std::vector<EncodedClip>& clips, TrainableParams& params,
                           PairRegistry& registry, const TrainOptions& opt);

// --- frame-level (SED) path ---------------------------------------------

struct SedEncodedClip {
    Tensor frames;  // L x C_e, audio-tower body output over mixture features
    EventTimeline timeline;
};

std::vector<SedEncodedClip> encode_sed_corpus(const SedCorpus& corpus, const std::string& dir,
                                              const ModelConfig& cfg, const ModelParams& params);

/// Class-conditioned text embeddings for SED queries: one unit vector per
/// ontology node id, produced by the frozen text path and the audio-caption
/// head. Fixed targets during frame training.
std::map<std::string, Tensor> sed_text_embeddings(const Ontology& ont, const ModelConfig& cfg,
                                                  const ModelParams& params,
                                                  const TrainableParams& trainable);

/// Frame objective's own learnable scale and bias.
struct FrameHead {
    double log_alpha = std::log(10.0);
    double beta = -10.0;

    double alpha() const { return std::exp(log_alpha); }
};

struct FrameTrainOptions {
    std::size_t steps = 1500;
    std::size_t batch = 8;
    double lr = 0.05;
    double momentum = 0.9;
    double p_local = 0.7;
    std::uint64_t seed = 1;
    std::size_t log_every = 1;
};

struct FrameTrainLog {
    TrainLog log;
    std::size_t local_steps = 0;
    std::size_t global_steps = 0;
};

/// Trains the frame bridge (and the frame (alpha, beta)) with the local /
/// global objective sampled per step at p_local.
FrameTrainLog train_frame(const std::vector<SedEncodedClip>& clips,
                          const std::map<std::string, Tensor>& text_embeddings,
                          const Ontology& ont, TrainableParams& params, FrameHead& head,
                          const FrameTrainOptions& opt);

/// Scores each (clip, class) pair: sigmoid(alpha * logit + beta) per frame,
/// then a median filter of `median_width`.
std::vector<sed::ScoreTrack> score_sed(const std::vector<SedEncodedClip>& clips,
                                       const std::map<std::string, Tensor>& text_embeddings,
                                       const std::vector<std::string>& class_ids,
                                       const TrainableParams& params, const FrameHead& head,
                                       std::size_t median_width, double rate_hz = 25.0);

// --- evaluation harness ----------------------------------------------------

/// Concept-level positives: gallery items sharing the query's concept.
std::vector<std::vector<std::size_t>> concept_positives(const std::vector<LoadedClip>& clips);

struct RetrievalMetrics {
    // rows of (task, metric) -> value, insertion-ordered for reports
    std::vector<std::tuple<std::string, std::string, double>> rows;

    void add(const std::string& task, const std::string& metric, double value);
    std::optional<double> find(const std::string& task, const std::string& metric) const;
};

/// Unimodal retrieval directions (T->A, T->V, A->V, ...) with and without
/// dual-softmax reweighting, plus joint tasks (native and max-unimodal
/// side by side) when the bundle carries joint streams.
RetrievalMetrics eval_retrieval(const std::vector<LoadedClip>& clips,
                                const EmbeddingBundle& bundle,
                                const std::vector<std::size_t>& k_values, double dsl_sharpen);

// --- checkpoint glue ---------------------------------------------------------

struct TrainedState {
    TrainableParams trainable;
    PairRegistry registry;
    FrameHead frame_head;
};

void save_state(const std::string& path, const std::string& config_json,
                const ModelConfig& cfg, const TrainedState& state);
TrainedState load_state(const std::string& path, const ModelConfig& cfg,
                        std::string* config_json_out = nullptr);

}  // namespace peav
