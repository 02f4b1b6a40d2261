#pragma once

#include <map>
#include <optional>
#include <string>

#include "peav/tensor.hpp"

namespace peav {

/// Identity of one embedding stream in the shared space.
///
/// A/V/AV are the audio, video and fused class embeddings; AT/VT/AVT the
/// audio-, video- and audio-video-caption text embeddings; A_VT and V_AT
/// the joint query embeddings (audio with video caption, video with audio
/// caption) used by the ten-pair fine-tuning registry.
enum class StreamTag { A, V, AV, AT, VT, AVT, A_VT, V_AT };

const char* stream_tag_name(StreamTag tag);
std::optional<StreamTag> stream_tag_from_name(const std::string& name);

/// Per-batch class embeddings, one row per sample, all in the shared
/// C_h-dimensional space. Present streams must share B and C_h and carry
/// unit-norm rows (producers normalize; validate() re-checks).
struct EmbeddingBundle {
    std::optional<Tensor> h_a, h_v, h_av;       // modality class embeddings
    std::optional<Tensor> h_ta, h_tv, h_tav;    // caption text embeddings
    std::optional<Tensor> h_at, h_vt;           // joint query embeddings

    bool has(StreamTag tag) const;
    const Tensor& get(StreamTag tag) const;  // throws config_error when absent
    void set(StreamTag tag, Tensor value);

    std::size_t batch_size() const;  // B of any present stream (0 if none)
    std::size_t dim() const;         // C_h of any present stream (0 if none)

    /// Checks shared shapes and row norms (1 +- tol).
    void validate(double norm_tol = 1e-9) const;
};

/// Gradient accumulator keyed by stream; absent entries mean zero.
using StreamGrads = std::map<StreamTag, Tensor>;

/// Adds `g` into grads[tag], allocating on first touch.
void accumulate_stream_grad(StreamGrads& grads, StreamTag tag, const Tensor& g);

}  // namespace peav
