#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "peav/prng.hpp"
#include "peav/tensor.hpp"

namespace peav {

/// Node of the sound-event label hierarchy. Parent links must form a
/// forest; names and synonyms are unique after case-folding.
struct OntologyNode {
    std::string id;
    std::string name;
    std::optional<std::string> parent;
    std::vector<std::string> synonyms;
};

class Ontology {
public:
    Ontology() = default;
    explicit Ontology(std::vector<OntologyNode> nodes);

    static Ontology from_json(const std::string& text);
    static Ontology load(const std::string& path);
    std::string to_json() const;
    void save(const std::string& path) const;

    bool contains(const std::string& id) const;
    const OntologyNode& node(const std::string& id) const;
    const std::vector<OntologyNode>& nodes() const { return nodes_; }

    /// Maps a query string (id, name, or synonym; case-insensitive) to its
    /// node id. Throws domain_error on unknown labels.
    std::string resolve(const std::string& query) const;

    /// Leaf ids in declaration order.
    std::vector<std::string> leaves() const;

    /// Ontology-linked variants of `id`: itself plus all descendants
    /// (synonym strings resolve to the same ids). Ancestors are included
    /// only when the flag is set.
    std::set<std::string> expand(const std::string& id, bool include_ancestors = false) const;

private:
    std::vector<OntologyNode> nodes_;
    std::map<std::string, std::size_t> by_id_;
    std::map<std::string, std::string> resolve_;           // case-folded name/synonym -> id
    std::map<std::string, std::vector<std::string>> children_;
};

/// set-of-ids form of the ont_expand operation.
std::set<std::string> ont_expand(const std::string& label, const Ontology& ont,
                                 bool include_ancestors = false);

struct TimedEvent {
    std::string label;
    double onset_s = 0.0;
    double offset_s = 0.0;
};

/// Per-clip annotation: events in seconds plus the rasterized frame mask.
struct EventTimeline {
    std::string clip_id;
    double duration_s = 0.0;
    std::vector<TimedEvent> events;

    std::size_t frame_count(double rate_hz) const;

    /// L x K {0,1} mask: m[l,k] = 1 iff frame l's center time lies in
    /// [onset_k, offset_k). Frame l covers [l/rate, (l+1)/rate).
    Tensor rasterize_mask(double rate_hz) const;

    void validate() const;
};

/// Timeline JSONL round-trip (one clip per line, events in seconds).
std::string timelines_to_jsonl(const std::vector<EventTimeline>& timelines);
std::vector<EventTimeline> timelines_from_jsonl(const std::string& text);
std::vector<EventTimeline> load_timelines(const std::string& path);
void save_timelines(const std::string& path, const std::vector<EventTimeline>& timelines);

/// One batch item of the frame objective: a sampled text query, the full
/// timeline, and how many of the padded frames are real.
struct FrameQueryItem {
    std::string query;
    EventTimeline timeline;
    std::size_t valid_len = 0;
};

/// Ontology-aware ground truth z[b,l,b'] in {+1,-1}, with 0 marking padded
/// (ignored) frames: +1 iff some event of item b is active at frame l and
/// item b''s query lies in that event's ontology expansion.
Tensor build_frame_labels(const std::vector<FrameQueryItem>& items, std::size_t padded_len,
                          const Ontology& ont, bool include_ancestors = false,
                          double rate_hz = 25.0);

/// logits[l] = (bridge e_a[l]) . h_t for frame embeddings e_a (L x C_e)
/// and a unit text embedding h_t (C_h). bridged_out receives bridge e_a
/// rows when the caller needs them for the backward pass.
Tensor frame_logits(const Tensor& e_a, const Tensor& h_t, const Tensor& bridge,
                    Tensor* bridged_out = nullptr);

/// Backward of frame_logits; d_bridge / d_e_a / d_h_t accumulate (pass
/// nullptr to skip).
void frame_logits_backward(const Tensor& e_a, const Tensor& h_t, const Tensor& bridge,
                           const Tensor& bridged, const Tensor& d_logits, Tensor* d_bridge,
                           Tensor* d_e_a, Tensor* d_h_t);

enum class FrameLossMode { local, global };

struct FrameLossResult {
    double loss = 0.0;
    Tensor d_logits;  // same shape as logits; zero at ignored entries
    double d_alpha = 0.0;
    double d_beta = 0.0;
};

/// Mean of -log sigmoid(z (alpha h + beta)) over valid entries. Local mode
/// consumes (B,L) logits against each item's own query; global mode
/// consumes (B,L,B) logits against every query in the batch. Labels use 0
/// as the ignore marker; an all-ignored batch is a domain error.
FrameLossResult frame_loss(const Tensor& logits, const Tensor& labels, FrameLossMode mode,
                           double alpha, double beta);

/// Local with probability p_local, global otherwise.
FrameLossMode sample_objective(double p_local, PrngStream& rng);

}  // namespace peav
