#include "peav/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "peav/numeric.hpp"

namespace peav {

ModelConfig ModelConfig::preset(ModelScale scale) {
    ModelConfig c;
    c.scale = scale;
    switch (scale) {
        case ModelScale::S:
            c.audio_depth = 12; c.audio_width = 768; c.heads = 6; c.mlp_dim = 2048;
            break;
        case ModelScale::B:
            c.audio_depth = 16; c.audio_width = 1024; c.heads = 8; c.mlp_dim = 2752;
            break;
        case ModelScale::L:
            c.audio_depth = 28; c.audio_width = 1792; c.heads = 14; c.mlp_dim = 4800;
            break;
        case ModelScale::TOY:
            c.audio_depth = 2; c.audio_width = 32; c.heads = 2; c.mlp_dim = 64;
            c.video_temporal_depth = 2; c.av_depth = 2; c.shared_dim = 32;
            c.feat_dim_audio = 8; c.feat_dim_video = 16; c.feat_dim_text = 16;
            c.validate();
            return c;
    }
    c.video_temporal_depth = 4;
    c.av_depth = 6;
    c.shared_dim = 1024;
    c.feat_dim_audio = 128;
    c.feat_dim_video = 1024;
    c.feat_dim_text = 1024;
    c.validate();
    return c;
}

std::optional<ModelScale> ModelConfig::scale_from_name(const std::string& name) {
    if (name == "S") return ModelScale::S;
    if (name == "B") return ModelScale::B;
    if (name == "L") return ModelScale::L;
    if (name == "TOY") return ModelScale::TOY;
    return std::nullopt;
}

const char* ModelConfig::scale_name(ModelScale scale) {
    switch (scale) {
        case ModelScale::S: return "S";
        case ModelScale::B: return "B";
        case ModelScale::L: return "L";
        case ModelScale::TOY: return "TOY";
    }
    return "?";
}

void ModelConfig::validate() const {
    if (heads == 0 || audio_width % heads != 0) {
        throw config_error("model config: width must be divisible by heads");
    }
    if ((audio_width / heads) % 2 != 0) {
        throw config_error("model config: head dim must be even for rotary encoding");
    }
    if (audio_hz <= 0.0 || video_fps <= 0.0) {
        throw config_error("model config: rates must be positive");
    }
    if (scale == ModelScale::TOY) {
        for (std::size_t e : {audio_depth, audio_width, video_temporal_depth, av_depth, heads,
                              shared_dim, feat_dim_audio, feat_dim_video, feat_dim_text}) {
            if (e < 2) throw config_error("TOY config: all extents must be >= 2");
        }
        if (shared_dim % heads != 0) {
            throw config_error("TOY config: shared dim must be divisible by heads");
        }
        return;
    }
    if (audio_width != 64 * audio_depth) {
        throw config_error("model config: width must equal 64 * depth for scale presets");
    }
    if (heads != audio_depth / 2) {
        throw config_error("model config: heads must equal depth / 2 for scale presets");
    }
    if (shared_dim != 1024) {
        throw config_error("model config: shared dim must be 1024 for scale presets");
    }
}

TokenSequence TokenSequence::body() const {
    if (!has_cls) return *this;
    const std::size_t l = length(), c = width();
    Tensor out = Tensor::zeros({l - 1, c});
    for (std::size_t i = 1; i < l; ++i) {
        for (std::size_t j = 0; j < c; ++j) out.at2(i - 1, j) = tokens.at2(i, j);
    }
    return TokenSequence{std::move(out), rate_hz, false};
}

std::optional<Modality> modality_from_name(const std::string& name) {
    if (name == "audio") return Modality::audio;
    if (name == "video") return Modality::video;
    if (name == "caption_audio") return Modality::caption_audio;
    if (name == "caption_video") return Modality::caption_video;
    if (name == "caption_av") return Modality::caption_av;
    if (name == "caption_transcript") return Modality::caption_transcript;
    return std::nullopt;
}

const char* modality_name(Modality m) {
    switch (m) {
        case Modality::audio: return "audio";
        case Modality::video: return "video";
        case Modality::caption_audio: return "caption_audio";
        case Modality::caption_video: return "caption_video";
        case Modality::caption_av: return "caption_av";
        case Modality::caption_transcript: return "caption_transcript";
    }
    return "?";
}

namespace {

// Caption stubs use a short fixed token count; the information lives in
// the pattern, not the length.
constexpr std::size_t kCaptionTokens = 12;

// Root key for concept patterns; independent from corpus seeds so that the
// same concept id denotes the same pattern in every corpus.
constexpr std::uint64_t kPatternRoot = 0x5045415633ull;

PrngStream pattern_stream(std::uint64_t kind, std::uint64_t key_a, std::uint64_t key_b) {
    return PrngStream(kPatternRoot)
        .substream(kind)
        .substream(key_a)
        .substream(key_b + 0x9E37ull);
}

void fill_gaussian(std::vector<double>& out, PrngStream& rng) {
    for (double& v : out) v = rng.next_gaussian();
}

}  // namespace

std::vector<double> stub_base_pattern(const StubDescriptor& clip, Modality modality,
                                      std::size_t dim) {
    std::vector<double> base(dim, 0.0);
    const auto kind = static_cast<std::uint64_t>(modality) + 1;
    if (!clip.compositional) {
        PrngStream rng = pattern_stream(kind, clip.concept_id, 0);
        fill_gaussian(base, rng);
        return base;
    }
    switch (modality) {
        case Modality::audio: {
            // Audio carries both halves side by side so a linear map can
            // recover either one.
            const std::size_t half = dim / 2;
            std::vector<double> lo(half), hi(dim - half);
            PrngStream ra = pattern_stream(kind, clip.part_a, 1);
            PrngStream rb = pattern_stream(kind, clip.part_b, 2);
            fill_gaussian(lo, ra);
            fill_gaussian(hi, rb);
            std::copy(lo.begin(), lo.end(), base.begin());
            std::copy(hi.begin(), hi.end(), base.begin() + static_cast<std::ptrdiff_t>(half));
            return base;
        }
        case Modality::video:
        case Modality::caption_video: {
            PrngStream rng = pattern_stream(kind, clip.part_a, 1);
            fill_gaussian(base, rng);
            return base;
        }
        case Modality::caption_audio:
        case Modality::caption_transcript: {
            PrngStream rng = pattern_stream(kind, clip.part_b, 2);
            fill_gaussian(base, rng);
            return base;
        }
        case Modality::caption_av: {
            PrngStream rng = pattern_stream(kind, clip.part_a, clip.part_b);
            fill_gaussian(base, rng);
            return base;
        }
    }
    return base;
}

TokenSequence stub_features(const StubDescriptor& clip, Modality modality,
                            const ModelConfig& cfg, double noise, PrngStream rng) {
    if (noise < 0.0) throw domain_error("stub_features: noise must be >= 0");
    std::size_t dim = 0, len = 0;
    double rate = 1.0;
    switch (modality) {
        case Modality::audio:
            dim = cfg.feat_dim_audio;
            rate = cfg.audio_hz;
            len = static_cast<std::size_t>(std::llround(clip.duration_s * rate));
            break;
        case Modality::video:
            dim = cfg.feat_dim_video;
            rate = cfg.video_fps;
            len = static_cast<std::size_t>(std::llround(clip.duration_s * rate));
            break;
        case Modality::caption_audio:
        case Modality::caption_video:
        case Modality::caption_av:
        case Modality::caption_transcript:
            dim = cfg.feat_dim_text;
            len = kCaptionTokens;
            break;
    }
    if (len == 0) throw domain_error("stub_features: zero-length sequence");
    std::vector<double> base = stub_base_pattern(clip, modality, dim);
    Tensor t = Tensor::zeros({len, dim});
    for (std::size_t l = 0; l < len; ++l) {
        for (std::size_t j = 0; j < dim; ++j) {
            t.at2(l, j) = base[j] + (noise > 0.0 ? noise * rng.next_gaussian() : 0.0);
        }
    }
    return TokenSequence{std::move(t), rate, false};
}

// --- towers -------------------------------------------------------------

namespace {

Tensor gaussian_tensor(std::vector<std::size_t> shape, double scale, PrngStream& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.next_gaussian();
    return t;
}

}  // namespace

TowerParams init_tower(std::size_t in_dim, const ModelConfig& cfg, std::size_t depth,
                       PrngStream& rng) {
    const std::size_t c = cfg.encoder_width();
    TowerParams p;
    p.heads = cfg.heads;
    p.entry_w = gaussian_tensor({c, in_dim}, 1.0 / std::sqrt(double(in_dim)), rng);
    p.entry_b = Tensor::zeros({c});
    p.cls = gaussian_tensor({c}, 1.0, rng);
    const double inv_sqrt_c = 1.0 / std::sqrt(double(c));
    // Residual-branch outputs start small so the identity path dominates
    // at init and token-local structure survives the frozen stack.
    const double resid_scale = 0.2;
    for (std::size_t d = 0; d < depth; ++d) {
        BlockParams b;
        b.ln1_gain = Tensor::full({c}, 1.0);
        b.ln1_bias = Tensor::zeros({c});
        b.wq = gaussian_tensor({c, c}, inv_sqrt_c, rng);
        b.wk = gaussian_tensor({c, c}, inv_sqrt_c, rng);
        b.wv = gaussian_tensor({c, c}, inv_sqrt_c, rng);
        b.wo = gaussian_tensor({c, c}, resid_scale * inv_sqrt_c, rng);
        b.ln2_gain = Tensor::full({c}, 1.0);
        b.ln2_bias = Tensor::zeros({c});
        b.w1 = gaussian_tensor({cfg.mlp_dim, c}, inv_sqrt_c, rng);
        b.b1 = Tensor::zeros({cfg.mlp_dim});
        b.w2 = gaussian_tensor({c, cfg.mlp_dim}, resid_scale / std::sqrt(double(cfg.mlp_dim)), rng);
        b.b2 = Tensor::zeros({c});
        p.blocks.push_back(std::move(b));
    }
    return p;
}

namespace {

Tensor layernorm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    const std::size_t m = x.shape()[0], c = x.shape()[1];
    Tensor y = Tensor::zeros({m, c});
    for (std::size_t i = 0; i < m; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += x.at2(i, j);
        mean /= double(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            double d = x.at2(i, j) - mean;
            var += d * d;
        }
        var /= double(c);
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (std::size_t j = 0; j < c; ++j) {
            y.at2(i, j) = (x.at2(i, j) - mean) * inv * gain[j] + bias[j];
        }
    }
    return y;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Rotates the head channels of row `vec` in place. CLS rows are skipped by
// the caller; position p is the token index without the CLS offset.
void apply_rotary(double* vec, std::size_t head_dim, std::size_t pos) {
    const std::size_t pairs = head_dim / 2;
    for (std::size_t k = 0; k < pairs; ++k) {
        const double theta = std::pow(10000.0, -2.0 * double(k) / double(head_dim));
        const double angle = double(pos) * theta;
        const double ca = std::cos(angle), sa = std::sin(angle);
        const double x0 = vec[2 * k], x1 = vec[2 * k + 1];
        vec[2 * k] = x0 * ca - x1 * sa;
        vec[2 * k + 1] = x0 * sa + x1 * ca;
    }
}

Tensor linear_rows(const Tensor& x, const Tensor& w) {
    // y = x w^T for w stored as (out, in)
    return matmul_nt(x, w);
}

void transformer_block(Tensor& y, const BlockParams& b, std::size_t heads, EncodeTrace* trace) {
    const std::size_t m = y.shape()[0], c = y.shape()[1];
    const std::size_t head_dim = c / heads;

    Tensor x1 = layernorm_rows(y, b.ln1_gain, b.ln1_bias);
    Tensor q = linear_rows(x1, b.wq);
    Tensor k = linear_rows(x1, b.wk);
    Tensor v = linear_rows(x1, b.wv);
    for (std::size_t i = 1; i < m; ++i) {
        for (std::size_t h = 0; h < heads; ++h) {
            apply_rotary(&q.at2(i, h * head_dim), head_dim, i - 1);
            apply_rotary(&k.at2(i, h * head_dim), head_dim, i - 1);
        }
    }

    Tensor attn_out = Tensor::zeros({m, c});
    Tensor* rows = nullptr;
    if (trace) {
        trace->attention.push_back(Tensor::zeros({heads * m, m}));
        rows = &trace->attention.back();
    }
    const double scale = 1.0 / std::sqrt(double(head_dim));
    std::vector<double> scores(m), weights(m);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * head_dim;
        for (std::size_t i = 0; i < m; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < m; ++j) {
                double s = 0.0;
                for (std::size_t d = 0; d < head_dim; ++d) s += q.at2(i, off + d) * k.at2(j, off + d);
                scores[j] = s * scale;
                mx = std::max(mx, scores[j]);
            }
            double sum = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                weights[j] = std::exp(scores[j] - mx);
                sum += weights[j];
            }
            for (std::size_t j = 0; j < m; ++j) {
                weights[j] /= sum;
                if (rows) rows->at2(h * m + i, j) = weights[j];
                const double w = weights[j];
                if (w == 0.0) continue;
                for (std::size_t d = 0; d < head_dim; ++d) {
                    attn_out.at2(i, off + d) += w * v.at2(j, off + d);
                }
            }
        }
    }
    y += linear_rows(attn_out, b.wo);

    Tensor x2 = layernorm_rows(y, b.ln2_gain, b.ln2_bias);
    Tensor h1 = linear_rows(x2, b.w1);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < b.b1.size(); ++j) h1.at2(i, j) = gelu(h1.at2(i, j) + b.b1[j]);
    }
    Tensor mlp_out = linear_rows(h1, b.w2);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < c; ++j) y.at2(i, j) += mlp_out.at2(i, j) + b.b2[j];
    }
}

}  // namespace

const TowerParams& ModelParams::tower(Tower t) const {
    switch (t) {
        case Tower::audio: return audio;
        case Tower::video_temporal: return video_temporal;
        case Tower::av_fusion: return av_fusion;
    }
    throw config_error("unknown tower");
}

ModelParams init_model(const ModelConfig& cfg, PrngStream rng) {
    cfg.validate();
    const std::size_t c = cfg.encoder_width();
    ModelParams p;
    PrngStream ra = rng.substream(1), rv = rng.substream(2), rf = rng.substream(3),
               rx = rng.substream(4);
    p.audio = init_tower(cfg.feat_dim_audio, cfg, cfg.audio_depth, ra);
    p.video_temporal = init_tower(cfg.feat_dim_video, cfg, cfg.video_temporal_depth, rv);
    p.av_fusion = init_tower(c, cfg, cfg.av_depth, rf);
    p.av_concat_w = gaussian_tensor({c, 2 * c}, 1.0 / std::sqrt(double(2 * c)), rx);
    p.av_concat_b = Tensor::zeros({c});
    p.text_entry_w = gaussian_tensor({c, cfg.feat_dim_text},
                                     1.0 / std::sqrt(double(cfg.feat_dim_text)), rx);
    p.text_entry_b = Tensor::zeros({c});
    return p;
}

TokenSequence encode_stream(const TokenSequence& x, Tower tower, const ModelConfig& cfg,
                            const ModelParams& params, EncodeTrace* trace) {
    if (x.has_cls) throw domain_error("encode_stream: input must not carry a CLS token");
    const TowerParams& tp = params.tower(tower);
    const std::size_t in_dim = tp.entry_w.shape()[1];
    if (x.width() != in_dim) {
        throw dimension_error("encode_stream: input width " + std::to_string(x.width()) +
                              " does not match tower entry width " + std::to_string(in_dim));
    }
    const std::size_t l = x.length(), c = cfg.encoder_width();
    Tensor projected = linear_rows(x.tokens, tp.entry_w);
    Tensor y = Tensor::zeros({l + 1, c});
    for (std::size_t j = 0; j < c; ++j) y.at2(0, j) = tp.cls[j];
    for (std::size_t i = 0; i < l; ++i) {
        for (std::size_t j = 0; j < c; ++j) y.at2(i + 1, j) = projected.at2(i, j) + tp.entry_b[j];
    }
    for (const BlockParams& b : tp.blocks) transformer_block(y, b, tp.heads, trace);
    return TokenSequence{std::move(y), x.rate_hz, true};
}

TokenSequence nn_resample(const TokenSequence& src, std::size_t target_len) {
    if (src.has_cls) throw domain_error("nn_resample: exclude the CLS token before resampling");
    const std::size_t l_src = src.length();
    if (l_src == 0 || target_len == 0) throw domain_error("nn_resample: zero-length sequence");
    const std::size_t c = src.width();
    Tensor out = Tensor::zeros({target_len, c});
    for (std::size_t l = 0; l < target_len; ++l) {
        auto idx = static_cast<std::size_t>(
            std::floor((double(l) + 0.5) * double(l_src) / double(target_len)));
        if (idx >= l_src) idx = l_src - 1;
        for (std::size_t j = 0; j < c; ++j) out.at2(l, j) = src.tokens.at2(idx, j);
    }
    double rate = src.rate_hz * double(target_len) / double(l_src);
    return TokenSequence{std::move(out), rate, false};
}

TokenSequence fuse_av(const TokenSequence& e_a, const TokenSequence& e_v,
                      const ModelConfig& cfg, const ModelParams& params) {
    if (e_a.has_cls || e_v.has_cls) throw domain_error("fuse_av: inputs must be CLS-free bodies");
    const std::size_t c = cfg.encoder_width();
    if (e_a.width() != c || e_v.width() != c) {
        throw dimension_error("fuse_av: token width must be " + std::to_string(c));
    }
    const std::size_t l_a = e_a.length();
    TokenSequence aligned = nn_resample(e_v, l_a);
    Tensor concat = Tensor::zeros({l_a, 2 * c});
    for (std::size_t i = 0; i < l_a; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            concat.at2(i, j) = e_a.tokens.at2(i, j);
            concat.at2(i, c + j) = aligned.tokens.at2(i, j);
        }
    }
    Tensor projected = linear_rows(concat, params.av_concat_w);
    for (std::size_t i = 0; i < l_a; ++i) {
        for (std::size_t j = 0; j < c; ++j) projected.at2(i, j) += params.av_concat_b[j];
    }
    TokenSequence fused_in{std::move(projected), e_a.rate_hz, false};
    return encode_stream(fused_in, Tower::av_fusion, cfg, params);
}

TokenSequence project_text_tokens(const TokenSequence& x, const ModelParams& params) {
    const std::size_t in_dim = params.text_entry_w.shape()[1];
    if (x.width() != in_dim) {
        throw dimension_error("project_text_tokens: input width " + std::to_string(x.width()) +
                              " does not match text entry width " + std::to_string(in_dim));
    }
    Tensor projected = linear_rows(x.tokens, params.text_entry_w);
    const std::size_t l = x.length(), c = params.text_entry_w.shape()[0];
    for (std::size_t i = 0; i < l; ++i) {
        for (std::size_t j = 0; j < c; ++j) projected.at2(i, j) += params.text_entry_b[j];
    }
    return TokenSequence{std::move(projected), x.rate_hz, false};
}

// --- trainable read-out ---------------------------------------------------

std::vector<std::pair<std::string, Tensor*>> TrainableParams::named() {
    return {
        {"pool_q_a", &pool_q_a},   {"pool_q_v", &pool_q_v}, {"pool_q_av", &pool_q_av},
        {"pool_q_t", &pool_q_t},   {"head_a", &head_a},     {"head_v", &head_v},
        {"head_av", &head_av},     {"head_ta", &head_ta},   {"head_tv", &head_tv},
        {"head_tav", &head_tav},   {"joint_at", &joint_at}, {"joint_vt", &joint_vt},
        {"bridge", &bridge},
    };
}

std::vector<std::pair<std::string, const Tensor*>> TrainableParams::named() const {
    auto mut = const_cast<TrainableParams*>(this)->named();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [name, t] : mut) out.emplace_back(name, t);
    return out;
}

TrainableParams init_trainable(const ModelConfig& cfg, PrngStream rng) {
    const std::size_t ce = cfg.encoder_width(), ch = cfg.shared_dim;
    const double head_scale = 1.0 / std::sqrt(double(ce));
    const double joint_scale = 1.0 / std::sqrt(double(2 * ch));
    PrngStream r = rng.substream(7);
    TrainableParams p;
    p.pool_q_a = gaussian_tensor({ce}, 1.0, r);
    p.pool_q_v = gaussian_tensor({ce}, 1.0, r);
    p.pool_q_av = gaussian_tensor({ce}, 1.0, r);
    p.pool_q_t = gaussian_tensor({ce}, 1.0, r);
    p.head_a = gaussian_tensor({ch, ce}, head_scale, r);
    p.head_v = gaussian_tensor({ch, ce}, head_scale, r);
    p.head_av = gaussian_tensor({ch, ce}, head_scale, r);
    p.head_ta = gaussian_tensor({ch, ce}, head_scale, r);
    p.head_tv = gaussian_tensor({ch, ce}, head_scale, r);
    p.head_tav = gaussian_tensor({ch, ce}, head_scale, r);
    p.joint_at = gaussian_tensor({ch, 2 * ch}, joint_scale, r);
    p.joint_vt = gaussian_tensor({ch, 2 * ch}, joint_scale, r);
    p.bridge = gaussian_tensor({ch, ce}, head_scale, r);
    return p;
}

std::vector<double> attn_pool(const Tensor& tokens, const Tensor& query,
                              std::vector<double>* weights_out) {
    const std::size_t m = tokens.shape()[0], c = tokens.shape()[1];
    if (m == 0) throw domain_error("attn_pool: empty token sequence");
    if (query.size() != c) {
        throw dimension_error("attn_pool: query dim " + std::to_string(query.size()) +
                              " vs token width " + std::to_string(c));
    }
    const double scale = 1.0 / std::sqrt(double(c));
    std::vector<double> w(m);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += tokens.at2(i, j) * query[j];
        w[i] = s * scale;
        mx = std::max(mx, w[i]);
    }
    double sum = 0.0;
    for (double& v : w) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : w) v /= sum;
    std::vector<double> pooled(c, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < c; ++j) pooled[j] += w[i] * tokens.at2(i, j);
    }
    if (weights_out) *weights_out = std::move(w);
    return pooled;
}

void attn_pool_backward(const Tensor& tokens, const Tensor& query,
                        const std::vector<double>& weights,
                        const std::vector<double>& d_pooled, Tensor& d_query) {
    const std::size_t m = tokens.shape()[0], c = tokens.shape()[1];
    const double scale = 1.0 / std::sqrt(double(c));
    (void)query;
    std::vector<double> dw(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += d_pooled[j] * tokens.at2(i, j);
        dw[i] = acc;
    }
    double inner = 0.0;
    for (std::size_t i = 0; i < m; ++i) inner += weights[i] * dw[i];
    for (std::size_t i = 0; i < m; ++i) {
        const double ds = weights[i] * (dw[i] - inner) * scale;
        for (std::size_t j = 0; j < c; ++j) d_query[j] += ds * tokens.at2(i, j);
    }
}

Tensor project_and_normalize(const Tensor& p, const Tensor& w, Tensor* u_out) {
    Tensor u = matmul_nt(p, w);
    Tensor h = l2_normalize(u, 1);
    if (u_out) *u_out = std::move(u);
    return h;
}

void project_and_normalize_backward(const Tensor& p, const Tensor& w, const Tensor& u,
                                    const Tensor& h, const Tensor& d_h, Tensor& d_w,
                                    Tensor* d_p) {
    constexpr double kEps = 1e-12;
    const std::size_t b = u.shape()[0], c = u.shape()[1];
    Tensor d_u = Tensor::zeros({b, c});
    for (std::size_t i = 0; i < b; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < c; ++j) sq += u.at2(i, j) * u.at2(i, j);
        const double norm = std::sqrt(sq);
        if (norm < kEps) {
            for (std::size_t j = 0; j < c; ++j) d_u.at2(i, j) = d_h.at2(i, j) / kEps;
            continue;
        }
        double hd = 0.0;
        for (std::size_t j = 0; j < c; ++j) hd += h.at2(i, j) * d_h.at2(i, j);
        for (std::size_t j = 0; j < c; ++j) {
            d_u.at2(i, j) = (d_h.at2(i, j) - h.at2(i, j) * hd) / norm;
        }
    }
    // d_w += d_u^T p; d_p += d_u w
    const std::size_t in_dim = w.shape()[1];
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            const double g = d_u.at2(i, j);
            if (g == 0.0) continue;
            for (std::size_t k = 0; k < in_dim; ++k) d_w.at2(j, k) += g * p.at2(i, k);
        }
    }
    if (d_p) {
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                const double g = d_u.at2(i, j);
                if (g == 0.0) continue;
                for (std::size_t k = 0; k < in_dim; ++k) d_p->at2(i, k) += g * w.at2(j, k);
            }
        }
    }
}

EmbeddingBundle project_heads(const PooledStreams& pooled, const TrainableParams& params,
                              std::optional<EmbeddingBundle>* pre_norm) {
    EmbeddingBundle bundle;
    EmbeddingBundle raw;
    auto run = [&](const std::optional<Tensor>& p, const Tensor& w, StreamTag tag) {
        if (!p.has_value()) return;
        Tensor u;
        bundle.set(tag, project_and_normalize(*p, w, &u));
        raw.set(tag, std::move(u));
    };
    run(pooled.a, params.head_a, StreamTag::A);
    run(pooled.v, params.head_v, StreamTag::V);
    run(pooled.av, params.head_av, StreamTag::AV);
    run(pooled.ta, params.head_ta, StreamTag::AT);
    run(pooled.tv, params.head_tv, StreamTag::VT);
    run(pooled.tav, params.head_tav, StreamTag::AVT);
    if (pre_norm) *pre_norm = std::move(raw);
    return bundle;
}

Tensor joint_embed(const Tensor& c_x, const Tensor& c_t, const Tensor& proj, Tensor* u_out,
                   Tensor* concat_out) {
    if (c_x.rank() != 2 || !c_x.same_shape(c_t)) {
        throw dimension_error("joint_embed: operand shapes " + c_x.shape_str() + " vs " +
                              c_t.shape_str());
    }
    const std::size_t b = c_x.shape()[0], ch = c_x.shape()[1];
    if (proj.shape()[1] != 2 * ch) {
        throw dimension_error("joint_embed: projection expects width " +
                              std::to_string(proj.shape()[1]) + ", inputs give " +
                              std::to_string(2 * ch));
    }
    Tensor concat = Tensor::zeros({b, 2 * ch});
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < ch; ++j) {
            concat.at2(i, j) = c_x.at2(i, j);
            concat.at2(i, ch + j) = c_t.at2(i, j);
        }
    }
    Tensor h = project_and_normalize(concat, proj, u_out);
    if (concat_out) *concat_out = std::move(concat);
    return h;
}

void joint_embed_backward(const Tensor& concat, const Tensor& proj, const Tensor& u,
                          const Tensor& h, const Tensor& d_h, Tensor& d_proj, Tensor* d_cx,
                          Tensor* d_ct) {
    const std::size_t b = concat.shape()[0];
    const std::size_t ch = concat.shape()[1] / 2;
    Tensor d_concat = Tensor::zeros(concat.shape());
    project_and_normalize_backward(concat, proj, u, h, d_h, d_proj, &d_concat);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < ch; ++j) {
            if (d_cx) d_cx->at2(i, j) += d_concat.at2(i, j);
            if (d_ct) d_ct->at2(i, j) += d_concat.at2(i, ch + j);
        }
    }
}

}  // namespace peav
