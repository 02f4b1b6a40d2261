#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "peav/embedding.hpp"
#include "peav/prng.hpp"
#include "peav/tensor.hpp"

namespace peav {

enum class ModelScale { S, B, L, TOY };

/// Encoder geometry. S/B/L are the full-size presets (width = 64 * depth,
/// heads = depth / 2, shared dim 1024) and exist for shape checks; TOY is the
/// default for every experiment in this repository.
struct ModelConfig {
    ModelScale scale = ModelScale::TOY;
    std::size_t audio_depth = 2;
    std::size_t audio_width = 32;  // also the common encoder width C_e
    std::size_t video_temporal_depth = 2;
    std::size_t av_depth = 2;
    std::size_t heads = 2;
    std::size_t mlp_dim = 64;
    std::size_t shared_dim = 32;   // C_h
    std::size_t feat_dim_audio = 8;
    std::size_t feat_dim_video = 16;
    std::size_t feat_dim_text = 16;
    double audio_hz = 25.0;
    double video_fps = 30.0;

    static ModelConfig preset(ModelScale scale);
    static std::optional<ModelScale> scale_from_name(const std::string& name);
    static const char* scale_name(ModelScale scale);

    std::size_t encoder_width() const { return audio_width; }

    /// Enforces the per-scale invariants; throws config_error on violation.
    void validate() const;
};

/// A run of tokens at a fixed rate. When has_cls is set the CLS token
/// occupies row 0 and is counted in the length.
struct TokenSequence {
    Tensor tokens;  // L x C
    double rate_hz = 0.0;
    bool has_cls = false;

    std::size_t length() const { return tokens.rank() == 2 ? tokens.shape()[0] : 0; }
    std::size_t width() const { return tokens.rank() == 2 ? tokens.shape()[1] : 0; }

    /// Token rows without the CLS slot.
    TokenSequence body() const;
};

enum class Modality {
    audio,
    video,
    caption_audio,
    caption_video,
    caption_av,
    caption_transcript,
};

std::optional<Modality> modality_from_name(const std::string& name);
const char* modality_name(Modality m);

/// What stub_features needs to know about a clip. Compositional clips
/// derive their patterns from two independent half-concepts so that video
/// exposes only part_a and the audio caption only part_b.
struct StubDescriptor {
    std::uint64_t concept_id = 0;
    double duration_s = 0.0;
    bool compositional = false;
    std::uint64_t part_a = 0;
    std::uint64_t part_b = 0;
};

/// Deterministic pseudo-features standing in for frozen pre-trained
/// extractors: a concept-keyed base pattern per modality plus Gaussian
/// noise of scale `noise` drawn from `rng`. Audio runs at 25 tokens/s and
/// video at 30; caption kinds share the clip's concept but key different
/// sub-patterns.
TokenSequence stub_features(const StubDescriptor& clip, Modality modality,
                            const ModelConfig& cfg, double noise, PrngStream rng);

/// The concept-keyed base pattern itself (no noise); used by prototype
/// oracles in tests and by the zero-shot prompt encoder.
std::vector<double> stub_base_pattern(const StubDescriptor& clip, Modality modality,
                                      std::size_t dim);

// --- frozen transformer towers ----------------------------------------

struct BlockParams {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, wk, wv, wo;       // C x C
    Tensor ln2_gain, ln2_bias;
    Tensor w1, b1;               // mlp_dim x C, mlp_dim
    Tensor w2, b2;               // C x mlp_dim, C
};

struct TowerParams {
    Tensor entry_w;  // C_e x C_in
    Tensor entry_b;  // C_e
    Tensor cls;      // C_e
    std::vector<BlockParams> blocks;
    std::size_t heads = 1;
};

enum class Tower { audio, video_temporal, av_fusion };

/// Frozen random tower of `depth` blocks at the config's width; exposed so
/// shape checks can build single towers without a full model.
TowerParams init_tower(std::size_t in_dim, const ModelConfig& cfg, std::size_t depth,
                       PrngStream& rng);

/// All frozen weights of the model. Only TrainableParams ever update.
struct ModelParams {
    TowerParams audio, video_temporal, av_fusion;
    Tensor av_concat_w;  // C_e x 2C_e, fusion entry projection
    Tensor av_concat_b;  // C_e
    Tensor text_entry_w; // C_e x C_t, frozen text feature projection
    Tensor text_entry_b; // C_e

    const TowerParams& tower(Tower t) const;
};

ModelParams init_model(const ModelConfig& cfg, PrngStream rng);

/// Optional capture of attention rows for invariant tests.
struct EncodeTrace {
    std::vector<Tensor> attention;  // one (heads*M) x M matrix per block
};

/// Prepends the tower's CLS token, applies the entry projection and the
/// pre-norm transformer blocks with rotary position encoding on non-CLS
/// positions. Pure function of (x, params): frozen towers never change.
TokenSequence encode_stream(const TokenSequence& x, Tower tower, const ModelConfig& cfg,
                            const ModelParams& params, EncodeTrace* trace = nullptr);

/// Nearest-neighbor temporal resampling: output row l copies source row
/// floor((l + 0.5) * L_src / L_tgt), clamped. CLS must be excluded first.
TokenSequence nn_resample(const TokenSequence& src, std::size_t target_len);

/// Aligns video to the audio rate, channel-concatenates, projects to C_e
/// and encodes with the av_fusion tower. Inputs are CLS-free bodies.
TokenSequence fuse_av(const TokenSequence& e_a, const TokenSequence& e_v,
                      const ModelConfig& cfg, const ModelParams& params);

/// Entry-projects caption tokens into C_e (the text path has no tower:
/// its extractor stand-in is already sequence-level).
TokenSequence project_text_tokens(const TokenSequence& x, const ModelParams& params);

// --- trainable read-out ------------------------------------------------

/// Everything gradient descent touches: attention-pool queries, projection
/// heads, joint projections, and the frame bridge.
struct TrainableParams {
    Tensor pool_q_a, pool_q_v, pool_q_av, pool_q_t;  // C_e each
    Tensor head_a, head_v, head_av;                   // C_h x C_e
    Tensor head_ta, head_tv, head_tav;                // C_h x C_e
    Tensor joint_at;  // C_h x 2C_h, audio with video caption
    Tensor joint_vt;  // C_h x 2C_h, video with audio caption
    Tensor bridge;    // C_h x C_e, frame-level audio-to-text bridge

    std::vector<std::pair<std::string, Tensor*>> named();
    std::vector<std::pair<std::string, const Tensor*>> named() const;
};

TrainableParams init_trainable(const ModelConfig& cfg, PrngStream rng);

/// Single-query attention pooling over a token matrix.
/// weights = softmax(tokens q / sqrt(C)); pooled = weights^T tokens.
std::vector<double> attn_pool(const Tensor& tokens, const Tensor& query,
                              std::vector<double>* weights_out = nullptr);

/// Backward of attn_pool for frozen tokens; accumulates into d_query.
void attn_pool_backward(const Tensor& tokens, const Tensor& query,
                        const std::vector<double>& weights,
                        const std::vector<double>& d_pooled, Tensor& d_query);

/// H = row-normalize(P W^T). Returns H; u_out (optional) receives the
/// pre-normalization rows needed by the backward pass.
Tensor project_and_normalize(const Tensor& p, const Tensor& w, Tensor* u_out = nullptr);

/// Backward of project_and_normalize. d_w accumulates; d_p (optional,
/// accumulates) receives the gradient w.r.t. the pooled inputs.
void project_and_normalize_backward(const Tensor& p, const Tensor& w, const Tensor& u,
                                    const Tensor& h, const Tensor& d_h, Tensor& d_w,
                                    Tensor* d_p = nullptr);

/// Per-stream pooled class vectors (B x C_e), pre-head.
struct PooledStreams {
    std::optional<Tensor> a, v, av, ta, tv, tav;
};

/// Linear head + L2 normalization per stream; text fans out through three
/// distinct heads. Throws config_error when a requested stream is absent.
EmbeddingBundle project_heads(const PooledStreams& pooled, const TrainableParams& params,
                              std::optional<EmbeddingBundle>* pre_norm = nullptr);

/// Joint text-conditioned embedding: rows of c_x and c_t are concatenated,
/// projected back to C_h and normalized.
Tensor joint_embed(const Tensor& c_x, const Tensor& c_t, const Tensor& proj,
                   Tensor* u_out = nullptr, Tensor* concat_out = nullptr);

/// Backward of joint_embed; accumulates into d_proj / d_cx / d_ct.
void joint_embed_backward(const Tensor& concat, const Tensor& proj, const Tensor& u,
                          const Tensor& h, const Tensor& d_h, Tensor& d_proj, Tensor* d_cx,
                          Tensor* d_ct);

}  // namespace peav
