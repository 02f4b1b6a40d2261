#include "peav/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include <nlohmann/json.hpp>

#include "peav/numeric.hpp"

namespace fs = std::filesystem;

namespace peav {

std::vector<LoadedClip> load_corpus(const std::string& dir) {
    Manifest manifest = Manifest::load((fs::path(dir) / "manifest.jsonl").string());
    std::vector<LoadedClip> out;
    out.reserve(manifest.clips.size());
    for (ClipRecord& rec : manifest.clips) {
        LoadedClip clip;
        auto feature = [&](const char* role) {
            auto it = rec.feature_paths.find(role);
            if (it == rec.feature_paths.end()) {
                throw config_error("clip '" + rec.id + "' is missing feature role '" + role + "'");
            }
            return read_feature_file((fs::path(dir) / it->second).string());
        };
        clip.feat_audio = feature("audio");
        clip.feat_video = feature("video");
        clip.feat_cap_audio = feature("caption_audio");
        clip.feat_cap_video = feature("caption_video");
        clip.feat_cap_av = feature("caption_av");
        clip.rec = std::move(rec);
        out.push_back(std::move(clip));
    }
    return out;
}

EncodedClip encode_clip(const LoadedClip& clip, const ModelConfig& cfg,
                        const ModelParams& params) {
    EncodedClip out;
    TokenSequence audio{clip.feat_audio, cfg.audio_hz, false};
    TokenSequence video{clip.feat_video, cfg.video_fps, false};
    TokenSequence enc_a = encode_stream(audio, Tower::audio, cfg, params);
    TokenSequence enc_v = encode_stream(video, Tower::video_temporal, cfg, params);
    TokenSequence fused = fuse_av(enc_a.body(), enc_v.body(), cfg, params);
    out.tokens_a = std::move(enc_a.tokens);
    out.tokens_v = std::move(enc_v.tokens);
    out.tokens_av = std::move(fused.tokens);
    out.text_a = project_text_tokens({clip.feat_cap_audio, 1.0, false}, params).tokens;
    out.text_v = project_text_tokens({clip.feat_cap_video, 1.0, false}, params).tokens;
    out.text_av = project_text_tokens({clip.feat_cap_av, 1.0, false}, params).tokens;
    return out;
}

std::vector<EncodedClip> encode_corpus(const std::vector<LoadedClip>& clips,
                                       const ModelConfig& cfg, const ModelParams& params) {
    std::vector<EncodedClip> out;
    out.reserve(clips.size());
    for (const LoadedClip& c : clips) out.push_back(encode_clip(c, cfg, params));
    return out;
}

namespace {

const Tensor& stream_tokens(const EncodedClip& clip, StreamTag tag) {
    switch (tag) {
        case StreamTag::A: return clip.tokens_a;
        case StreamTag::V: return clip.tokens_v;
        case StreamTag::AV: return clip.tokens_av;
        case StreamTag::AT: return clip.text_a;
        case StreamTag::VT: return clip.text_v;
        case StreamTag::AVT: return clip.text_av;
        default: throw config_error("stream has no token source");
    }
}

const Tensor& pool_query_for(const TrainableParams& p, StreamTag tag) {
    switch (tag) {
        case StreamTag::A: return p.pool_q_a;
        case StreamTag::V: return p.pool_q_v;
        case StreamTag::AV: return p.pool_q_av;
        default: return p.pool_q_t;  // the three caption kinds share one query
    }
}

const Tensor& head_for(const TrainableParams& p, StreamTag tag) {
    switch (tag) {
        case StreamTag::A: return p.head_a;
        case StreamTag::V: return p.head_v;
        case StreamTag::AV: return p.head_av;
        case StreamTag::AT: return p.head_ta;
        case StreamTag::VT: return p.head_tv;
        case StreamTag::AVT: return p.head_tav;
        default: throw config_error("stream has no head");
    }
}

const char* pool_query_name(StreamTag tag) {
    switch (tag) {
        case StreamTag::A: return "pool_q_a";
        case StreamTag::V: return "pool_q_v";
        case StreamTag::AV: return "pool_q_av";
        default: return "pool_q_t";
    }
}

const char* head_name(StreamTag tag) {
    switch (tag) {
        case StreamTag::A: return "head_a";
        case StreamTag::V: return "head_v";
        case StreamTag::AV: return "head_av";
        case StreamTag::AT: return "head_ta";
        case StreamTag::VT: return "head_tv";
        case StreamTag::AVT: return "head_tav";
        default: throw config_error("stream has no head");
    }
}

constexpr StreamTag kBaseTags[] = {StreamTag::A,  StreamTag::V,  StreamTag::AV,
                                   StreamTag::AT, StreamTag::VT, StreamTag::AVT};

std::optional<Tensor>* pooled_field(PooledStreams& pooled, StreamTag tag) {
    switch (tag) {
        case StreamTag::A: return &pooled.a;
        case StreamTag::V: return &pooled.v;
        case StreamTag::AV: return &pooled.av;
        case StreamTag::AT: return &pooled.ta;
        case StreamTag::VT: return &pooled.tv;
        case StreamTag::AVT: return &pooled.tav;
        default: return nullptr;
    }
}

const std::optional<Tensor>* pooled_field(const PooledStreams& pooled, StreamTag tag) {
    return pooled_field(const_cast<PooledStreams&>(pooled), tag);
}

// Fisher-Yates shuffle driven by the library PRNG, for reproducible batches.
void shuffle_indices(std::vector<std::size_t>& idx, PrngStream& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        std::size_t j = rng.next_index(i);
        std::swap(idx[i - 1], idx[j]);
    }
}

}  // namespace

BundleForward forward_bundle(const std::vector<EncodedClip>& clips,
                             const std::vector<std::size_t>& batch,
                             const TrainableParams& params, bool with_joints) {
    if (batch.empty()) throw domain_error("forward_bundle: empty batch");
    BundleForward fwd;
    fwd.batch = batch;
    fwd.with_joints = with_joints;
    const std::size_t b = batch.size();

    for (StreamTag tag : kBaseTags) {
        const Tensor& q = pool_query_for(params, tag);
        const std::size_t ce = q.size();
        Tensor pooled = Tensor::zeros({b, ce});
        auto& weights = fwd.pool_weights[tag];
        weights.resize(b);
        for (std::size_t i = 0; i < b; ++i) {
            const Tensor& tokens = stream_tokens(clips[batch[i]], tag);
            std::vector<double> p = attn_pool(tokens, q, &weights[i]);
            for (std::size_t j = 0; j < ce; ++j) pooled.at2(i, j) = p[j];
        }
        pooled_field(fwd.pooled, tag)->emplace(std::move(pooled));
    }

    std::optional<EmbeddingBundle> pre_norm;
    fwd.bundle = project_heads(fwd.pooled, params, &pre_norm);
    fwd.pre_norm = std::move(*pre_norm);

    if (with_joints) {
        fwd.bundle.set(StreamTag::A_VT,
                       joint_embed(fwd.bundle.get(StreamTag::A), fwd.bundle.get(StreamTag::VT),
                                   params.joint_at, &fwd.joint_at_u, &fwd.joint_at_concat));
        fwd.bundle.set(StreamTag::V_AT,
                       joint_embed(fwd.bundle.get(StreamTag::V), fwd.bundle.get(StreamTag::AT),
                                   params.joint_vt, &fwd.joint_vt_u, &fwd.joint_vt_concat));
    }
    return fwd;
}

TrainableGrads backward_bundle(const BundleForward& fwd, const std::vector<EncodedClip>& clips,
                               const TrainableParams& params, const StreamGrads& bundle_grads) {
    TrainableGrads grads;
    for (const auto& [name, tensor] : params.named()) {
        grads.emplace(name, Tensor::zeros(tensor->shape()));
    }
    const std::size_t b = fwd.batch.size();
    const std::size_t ch = fwd.bundle.dim();

    // dL/dH per base stream; joint backward adds its upstream contributions.
    std::map<StreamTag, Tensor> d_h;
    for (StreamTag tag : kBaseTags) d_h.emplace(tag, Tensor::zeros({b, ch}));
    for (const auto& [tag, g] : bundle_grads) {
        if (tag == StreamTag::A_VT || tag == StreamTag::V_AT) continue;
        d_h.at(tag) += g;
    }

    if (fwd.with_joints) {
        auto joint_back = [&](StreamTag joint_tag, const Tensor& proj, const char* proj_name,
                              const Tensor& concat, const Tensor& u, StreamTag x_tag,
                              StreamTag t_tag) {
            auto it = bundle_grads.find(joint_tag);
            if (it == bundle_grads.end()) return;
            joint_embed_backward(concat, proj, u, fwd.bundle.get(joint_tag), it->second,
                                 grads.at(proj_name), &d_h.at(x_tag), &d_h.at(t_tag));
        };
        joint_back(StreamTag::A_VT, params.joint_at, "joint_at", fwd.joint_at_concat,
                   fwd.joint_at_u, StreamTag::A, StreamTag::VT);
        joint_back(StreamTag::V_AT, params.joint_vt, "joint_vt", fwd.joint_vt_concat,
                   fwd.joint_vt_u, StreamTag::V, StreamTag::AT);
    }

    for (StreamTag tag : kBaseTags) {
        const Tensor& pooled = **pooled_field(fwd.pooled, tag);
        const Tensor& w = head_for(params, tag);
        const std::size_t ce = pooled.shape()[1];
        Tensor d_pooled = Tensor::zeros({b, ce});
        project_and_normalize_backward(pooled, w, fwd.pre_norm.get(tag), fwd.bundle.get(tag),
                                       d_h.at(tag), grads.at(head_name(tag)), &d_pooled);
        Tensor& d_q = grads.at(pool_query_name(tag));
        const Tensor& q = pool_query_for(params, tag);
        const auto& weights = fwd.pool_weights.at(tag);
        std::vector<double> dp(ce);
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < ce; ++j) dp[j] = d_pooled.at2(i, j);
            attn_pool_backward(stream_tokens(clips[fwd.batch[i]], tag), q, weights[i], dp, d_q);
        }
    }
    return grads;
}

std::string TrainLog::to_csv() const {
    std::ostringstream out;
    out.precision(10);
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (i) out << ',';
        out << columns[i];
    }
    out << '\n';
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            if (i == 0) {
                out << static_cast<long long>(row[i]);
            } else {
                out << row[i];
            }
        }
        out << '\n';
    }
    return out.str();
}

TrainLog train_contrastive(const std::vector<EncodedClip>& clips, TrainableParams& params,
                           PairRegistry& registry, const TrainOptions& opt) {
    registry.validate();
    if (clips.empty()) throw config_error("train: empty corpus");
    bool with_joints = false;
    for (const LossPairSpec& p : registry.pairs) {
        if (p.left == StreamTag::A_VT || p.left == StreamTag::V_AT ||
            p.right == StreamTag::A_VT || p.right == StreamTag::V_AT) {
            with_joints = true;
        }
    }
    const std::size_t batch_size = std::min(opt.batch, clips.size());

    TrainLog log;
    log.columns = {"step", "total"};
    for (const LossPairSpec& p : registry.pairs) log.columns.push_back(p.name());

    SgdOptimizer sgd(opt.lr, opt.momentum);
    PrngStream sampler = PrngStream(opt.seed).substream(0xBA7C4);
    std::vector<std::size_t> order(clips.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t step = 0; step < opt.steps; ++step) {
        shuffle_indices(order, sampler);
        std::vector<std::size_t> batch(order.begin(),
                                       order.begin() + static_cast<std::ptrdiff_t>(batch_size));

        BundleForward fwd = forward_bundle(clips, batch, params, with_joints);
        MultiPairResult loss = multi_pair_loss(fwd.bundle, registry, opt.negated_similarity_sign);
        if (!std::isfinite(loss.total)) {
            throw domain_error("train: non-finite loss at step " + std::to_string(step));
        }
        if (step == 0) log.initial_loss = loss.total;
        log.final_loss = loss.total;
        if (step % opt.log_every == 0 || step + 1 == opt.steps) {
            std::vector<double> row{double(step), loss.total};
            row.insert(row.end(), loss.per_pair.begin(), loss.per_pair.end());
            log.rows.push_back(std::move(row));
        }

        TrainableGrads grads = backward_bundle(fwd, clips, params, loss.stream_grads);
        const double warm =
            opt.warmup_steps ? std::min(1.0, double(step + 1) / double(opt.warmup_steps)) : 1.0;
        sgd.set_lr(opt.lr * warm);
        for (auto& [name, tensor] : params.named()) sgd.step(name, *tensor, grads.at(name));
        for (std::size_t pi = 0; pi < registry.pairs.size(); ++pi) {
            sgd.step_pair("pair." + registry.pairs[pi].name(), registry.pairs[pi],
                          loss.d_alpha[pi], loss.d_beta[pi]);
        }
    }
    return log;
}

// --- frame-level path -----------------------------------------------------

std::vector<SedEncodedClip> encode_sed_corpus(const SedCorpus& corpus, const std::string& dir,
                                              const ModelConfig& cfg, const ModelParams& params) {
    std::vector<SedEncodedClip> out;
    out.reserve(corpus.timelines.size());
    for (std::size_t i = 0; i < corpus.timelines.size(); ++i) {
        Tensor features = read_feature_file((fs::path(dir) / corpus.feature_paths[i]).string());
        TokenSequence seq{std::move(features), cfg.audio_hz, false};
        TokenSequence enc = encode_stream(seq, Tower::audio, cfg, params);
        out.push_back({enc.body().tokens, corpus.timelines[i]});
    }
    return out;
}

std::map<std::string, Tensor> sed_text_embeddings(const Ontology& ont, const ModelConfig& cfg,
                                                  const ModelParams& params,
                                                  const TrainableParams& trainable) {
    std::map<std::string, Tensor> out;
    for (const OntologyNode& node : ont.nodes()) {
        StubDescriptor d;
        d.concept_id = fnv1a64(node.id.c_str(), node.id.size());
        d.duration_s = 1.0;
        TokenSequence raw =
            stub_features(d, Modality::caption_audio, cfg, 0.0, PrngStream(0));
        TokenSequence projected = project_text_tokens(raw, params);
        std::vector<double> pooled = attn_pool(projected.tokens, trainable.pool_q_t);
        Tensor pooled_row = Tensor::from_data({1, pooled.size()}, pooled);
        Tensor h = project_and_normalize(pooled_row, trainable.head_ta);
        out.emplace(node.id, Tensor::vector(h.row(0)));
    }
    return out;
}

namespace {

// logits row for one clip against one text embedding, plus the bridged
// frame matrix cache.
struct ClipLogits {
    Tensor bridged;  // L x C_h
    Tensor logits;   // L
};

ClipLogits clip_frame_logits(const SedEncodedClip& clip, const Tensor& h_t,
                             const Tensor& bridge) {
    ClipLogits out;
    out.logits = frame_logits(clip.frames, h_t, bridge, &out.bridged);
    return out;
}

}  // namespace

FrameTrainLog train_frame(const std::vector<SedEncodedClip>& clips,
                          const std::map<std::string, Tensor>& text_embeddings,
                          const Ontology& ont, TrainableParams& params, FrameHead& head,
                          const FrameTrainOptions& opt) {
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        if (!clips[i].timeline.events.empty()) eligible.push_back(i);
    }
    if (eligible.empty()) throw config_error("train_frame: no clip carries events");
    const std::size_t batch_size = std::min(opt.batch, eligible.size());

    FrameTrainLog out;
    out.log.columns = {"step", "total", "mode_local"};
    SgdOptimizer sgd(opt.lr, opt.momentum);
    PrngStream sampler = PrngStream(opt.seed).substream(0xF4A3E);

    for (std::size_t step = 0; step < opt.steps; ++step) {
        shuffle_indices(eligible, sampler);
        std::vector<std::size_t> batch(eligible.begin(),
                                       eligible.begin() + static_cast<std::ptrdiff_t>(batch_size));
        const std::size_t b = batch.size();

        // one sampled query per item, uniform over its annotated events
        std::vector<FrameQueryItem> items;
        std::size_t padded_len = 0;
        for (std::size_t i : batch) {
            const auto& events = clips[i].timeline.events;
            FrameQueryItem item;
            item.query = events[sampler.next_index(events.size())].label;
            item.timeline = clips[i].timeline;
            item.valid_len = clips[i].frames.shape()[0];
            padded_len = std::max(padded_len, item.valid_len);
            items.push_back(std::move(item));
        }
        FrameLossMode mode = sample_objective(opt.p_local, sampler);
        (mode == FrameLossMode::local ? out.local_steps : out.global_steps) += 1;

        Tensor labels_full = build_frame_labels(items, padded_len, ont);
        std::vector<ClipLogits> per_clip(b);
        for (std::size_t i = 0; i < b; ++i) {
            per_clip[i] = clip_frame_logits(clips[batch[i]],
                                            text_embeddings.at(ont.resolve(items[i].query)),
                                            params.bridge);
        }

        FrameLossResult loss;
        Tensor d_bridge = Tensor::zeros(params.bridge.shape());
        if (mode == FrameLossMode::local) {
            Tensor logits = Tensor::zeros({b, padded_len});
            Tensor labels = Tensor::zeros({b, padded_len});
            for (std::size_t i = 0; i < b; ++i) {
                for (std::size_t l = 0; l < items[i].valid_len; ++l) {
                    logits[i * padded_len + l] = per_clip[i].logits[l];
                    labels[i * padded_len + l] = labels_full[(i * padded_len + l) * b + i];
                }
            }
            loss = frame_loss(logits, labels, FrameLossMode::local, head.alpha(), head.beta);
            for (std::size_t i = 0; i < b; ++i) {
                Tensor d_logits = Tensor::zeros({items[i].valid_len});
                for (std::size_t l = 0; l < items[i].valid_len; ++l) {
                    d_logits[l] = loss.d_logits[i * padded_len + l];
                }
                frame_logits_backward(clips[batch[i]].frames,
                                      text_embeddings.at(ont.resolve(items[i].query)),
                                      params.bridge, per_clip[i].bridged, d_logits, &d_bridge,
                                      nullptr, nullptr);
            }
        } else {
            // global mode scores every item's frames against every query
            std::vector<const Tensor*> queries(b);
            for (std::size_t i = 0; i < b; ++i) {
                queries[i] = &text_embeddings.at(ont.resolve(items[i].query));
            }
            const std::size_t ch = params.bridge.shape()[0];
            Tensor logits = Tensor::zeros({b, padded_len, b});
            for (std::size_t i = 0; i < b; ++i) {
                for (std::size_t l = 0; l < items[i].valid_len; ++l) {
                    for (std::size_t qi = 0; qi < b; ++qi) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < ch; ++j) {
                            acc += per_clip[i].bridged.at2(l, j) * (*queries[qi])[j];
                        }
                        logits[(i * padded_len + l) * b + qi] = acc;
                    }
                }
            }
            loss = frame_loss(logits, labels_full, FrameLossMode::global, head.alpha(), head.beta);
            for (std::size_t i = 0; i < b; ++i) {
                const std::size_t l_valid = items[i].valid_len;
                Tensor d_bridged = Tensor::zeros({l_valid, ch});
                for (std::size_t l = 0; l < l_valid; ++l) {
                    for (std::size_t qi = 0; qi < b; ++qi) {
                        const double g = loss.d_logits[(i * padded_len + l) * b + qi];
                        if (g == 0.0) continue;
                        for (std::size_t j = 0; j < ch; ++j) {
                            d_bridged.at2(l, j) += g * (*queries[qi])[j];
                        }
                    }
                }
                // d_bridge += d_bridged^T frames
                const Tensor& frames = clips[batch[i]].frames;
                const std::size_t ce = frames.shape()[1];
                for (std::size_t l = 0; l < l_valid; ++l) {
                    for (std::size_t j = 0; j < ch; ++j) {
                        const double g = d_bridged.at2(l, j);
                        if (g == 0.0) continue;
                        for (std::size_t k = 0; k < ce; ++k) {
                            d_bridge.at2(j, k) += g * frames.at2(l, k);
                        }
                    }
                }
            }
        }
        if (!std::isfinite(loss.loss)) {
            throw domain_error("train_frame: non-finite loss at step " + std::to_string(step));
        }
        if (step == 0) out.log.initial_loss = loss.loss;
        out.log.final_loss = loss.loss;
        if (step % opt.log_every == 0 || step + 1 == opt.steps) {
            out.log.rows.push_back(
                {double(step), loss.loss, mode == FrameLossMode::local ? 1.0 : 0.0});
        }

        sgd.step("bridge", params.bridge, d_bridge);
        sgd.step_scalar("frame.log_alpha", head.log_alpha, head.alpha() * loss.d_alpha);
        sgd.step_scalar("frame.beta", head.beta, loss.d_beta);
    }
    return out;
}

std::vector<sed::ScoreTrack> score_sed(const std::vector<SedEncodedClip>& clips,
                                       const std::map<std::string, Tensor>& text_embeddings,
                                       const std::vector<std::string>& class_ids,
                                       const TrainableParams& params, const FrameHead& head,
                                       std::size_t median_width, double rate_hz) {
    std::vector<sed::ScoreTrack> out;
    for (const SedEncodedClip& clip : clips) {
        for (const std::string& cls : class_ids) {
            Tensor logits = frame_logits(clip.frames, text_embeddings.at(cls), params.bridge);
            std::vector<double> scores(logits.size());
            for (std::size_t l = 0; l < logits.size(); ++l) {
                scores[l] = sigmoid(head.alpha() * logits[l] + head.beta);
            }
            scores = sed::median_filter(scores, median_width);
            out.push_back({clip.timeline.clip_id, cls, std::move(scores), rate_hz});
        }
    }
    return out;
}

// --- evaluation harness ----------------------------------------------------

std::vector<std::vector<std::size_t>> concept_positives(const std::vector<LoadedClip>& clips) {
    std::vector<std::vector<std::size_t>> positives(clips.size());
    for (std::size_t i = 0; i < clips.size(); ++i) {
        for (std::size_t j = 0; j < clips.size(); ++j) {
            if (clips[i].rec.concept_id == clips[j].rec.concept_id) positives[i].push_back(j);
        }
    }
    return positives;
}

void RetrievalMetrics::add(const std::string& task, const std::string& metric, double value) {
    rows.emplace_back(task, metric, value);
}

std::optional<double> RetrievalMetrics::find(const std::string& task,
                                             const std::string& metric) const {
    for (const auto& [t, m, v] : rows) {
        if (t == task && m == metric) return v;
    }
    return std::nullopt;
}

RetrievalMetrics eval_retrieval(const std::vector<LoadedClip>& clips,
                                const EmbeddingBundle& bundle,
                                const std::vector<std::size_t>& k_values, double dsl_sharpen) {
    RetrievalMetrics out;
    auto positives = concept_positives(clips);

    struct Direction {
        const char* name;
        StreamTag query, gallery;
    };
    const Direction directions[] = {
        {"T->A", StreamTag::AT, StreamTag::A},   {"T->V", StreamTag::VT, StreamTag::V},
        {"A->V", StreamTag::A, StreamTag::V},    {"V->A", StreamTag::V, StreamTag::A},
        {"T->AV", StreamTag::AVT, StreamTag::AV},
    };
    for (const Direction& d : directions) {
        if (!bundle.has(d.query) || !bundle.has(d.gallery)) continue;
        retrieval::SimMatrix sims =
            retrieval::make_sim_matrix(bundle.get(d.query), bundle.get(d.gallery), positives);
        retrieval::SimMatrix reweighted = sims;
        reweighted.values = retrieval::dsl_reweight(sims.values, dsl_sharpen);
        for (std::size_t k : k_values) {
            out.add(d.name, "r@" + std::to_string(k), retrieval::recall_at_k(sims, k));
            out.add(d.name, "r@" + std::to_string(k) + "_dsl",
                    retrieval::recall_at_k(reweighted, k));
        }
    }

    if (bundle.has(StreamTag::A_VT) && bundle.has(StreamTag::V_AT)) {
        using retrieval::JointStrategy;
        using retrieval::JointTask;
        for (JointTask task : {JointTask::TV_to_A, JointTask::TA_to_V, JointTask::T_to_AV,
                               JointTask::AV_to_T}) {
            out.add(retrieval::joint_task_name(task), "r@1_native",
                    retrieval::joint_query_eval(bundle, task, JointStrategy::native, positives));
            out.add(retrieval::joint_task_name(task), "r@1_max_unimodal",
                    retrieval::joint_query_eval(bundle, task, JointStrategy::max_unimodal,
                                                positives));
        }
    }
    return out;
}

// --- checkpoint glue --------------------------------------------------------

void save_state(const std::string& path, const std::string& config_json,
                const ModelConfig& cfg, const TrainedState& state) {
    Checkpoint ckpt;
    nlohmann::json config;
    config["experiment"] =
        nlohmann::json::parse(config_json.empty() ? std::string("{}") : config_json);
    config["registry"] = nlohmann::json::parse(state.registry.to_json());
    config["preset"] = state.registry.preset == RegistryPreset::PRETRAIN_8     ? "PRETRAIN_8"
                       : state.registry.preset == RegistryPreset::FINETUNE_10 ? "FINETUNE_10"
                                                                              : "CUSTOM";
    config["scale"] = ModelConfig::scale_name(cfg.scale);
    ckpt.config_json = config.dump();

    for (const auto& [name, tensor] : state.trainable.named()) {
        ckpt.tensors.emplace_back(name, *tensor);
    }
    const std::size_t n_pairs = state.registry.pairs.size();
    Tensor log_alpha = Tensor::zeros({n_pairs}), beta = Tensor::zeros({n_pairs});
    for (std::size_t i = 0; i < n_pairs; ++i) {
        log_alpha[i] = state.registry.pairs[i].log_alpha;
        beta[i] = state.registry.pairs[i].beta;
    }
    ckpt.tensors.emplace_back("pairs.log_alpha", std::move(log_alpha));
    ckpt.tensors.emplace_back("pairs.beta", std::move(beta));
    ckpt.tensors.emplace_back("frame.log_alpha", Tensor::vector({state.frame_head.log_alpha}));
    ckpt.tensors.emplace_back("frame.beta", Tensor::vector({state.frame_head.beta}));
    write_checkpoint(path, ckpt);
}

TrainedState load_state(const std::string& path, const ModelConfig& cfg,
                        std::string* config_json_out) {
    Checkpoint ckpt = read_checkpoint(path);
    nlohmann::json config = nlohmann::json::parse(ckpt.config_json);
    TrainedState state;
    state.registry = PairRegistry::from_json(config.at("registry").dump());
    const std::string preset = config.value("preset", "CUSTOM");
    if (preset == "PRETRAIN_8") state.registry.preset = RegistryPreset::PRETRAIN_8;
    if (preset == "FINETUNE_10") state.registry.preset = RegistryPreset::FINETUNE_10;
    state.trainable = init_trainable(cfg, PrngStream(0));

    std::map<std::string, Tensor> by_name;
    for (auto& [name, tensor] : ckpt.tensors) by_name.emplace(name, std::move(tensor));
    for (auto& [name, tensor] : state.trainable.named()) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw format_error("checkpoint missing tensor '" + name + "'", 0);
        if (!tensor->same_shape(it->second)) {
            throw config_error("checkpoint tensor '" + name + "' has shape " +
                               it->second.shape_str() + ", expected " + tensor->shape_str());
        }
        *tensor = it->second;
    }
    const Tensor& log_alpha = by_name.at("pairs.log_alpha");
    const Tensor& beta = by_name.at("pairs.beta");
    if (log_alpha.size() != state.registry.pairs.size()) {
        throw config_error("checkpoint pair parameters disagree with the registry");
    }
    for (std::size_t i = 0; i < state.registry.pairs.size(); ++i) {
        state.registry.pairs[i].log_alpha = log_alpha[i];
        state.registry.pairs[i].beta = beta[i];
    }
    state.frame_head.log_alpha = by_name.at("frame.log_alpha")[0];
    state.frame_head.beta = by_name.at("frame.beta")[0];
    if (config_json_out) *config_json_out = config.value("experiment", nlohmann::json::object()).dump();
    return state;
}

}  // namespace peav
