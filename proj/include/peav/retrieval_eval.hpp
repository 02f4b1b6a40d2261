#pragma once

#include <functional>
#include <string>
#include <vector>

#include "peav/embedding.hpp"
#include "peav/tensor.hpp"

namespace peav::retrieval {

/// Query-by-gallery cosine similarities plus the positive set per query.
struct SimMatrix {
    std::vector<std::string> row_ids;               // queries
    std::vector<std::string> col_ids;               // gallery
    Tensor values;                                  // Q x G
    std::vector<std::vector<std::size_t>> positives;  // per query, >= 1 each

    void validate() const;
};

/// Dual-softmax reweighting: out = sims (elementwise*) softmax over the
/// query axis of (sharpen * sims). The bias term is ignored by design: it
/// cannot change relative rankings. `over_gallery_axis` exposes the
/// transposed reading of the pseudocode's dim=0.
Tensor dsl_reweight(const Tensor& sims, double sharpen, bool over_gallery_axis = false);

/// Fraction of queries whose top-k gallery entries (stable ties by lower
/// index) intersect the positive set.
double recall_at_k(const SimMatrix& sims, std::size_t k);

/// Builds a similarity matrix from row-normalized query/gallery embeddings.
SimMatrix make_sim_matrix(const Tensor& queries, const Tensor& gallery,
                          const std::vector<std::vector<std::size_t>>& positives);

/// Encodes every template instantiation per class, averages, re-normalizes,
/// and scores top-1 accuracy of argmax cosine against `labels`.
/// The encoder maps prompt text to a C_h embedding (rows need not be
/// normalized; prototypes are normalized after averaging).
double classify_zero_shot(const Tensor& embeds, const std::vector<std::string>& class_names,
                          const std::vector<std::string>& templates,
                          const std::function<std::vector<double>(const std::string&)>& text_encoder,
                          const std::vector<std::size_t>& labels);

/// Replaces "{c}" in a template with the class name.
std::string instantiate_template(const std::string& tmpl, const std::string& class_name);

enum class JointTask { TV_to_A, TA_to_V, T_to_AV, AV_to_T };
enum class JointStrategy { native, max_unimodal };

const char* joint_task_name(JointTask t);
const char* joint_strategy_name(JointStrategy s);

/// Recall@1 of a joint-modal retrieval task. Native uses the bundle's
/// joint embeddings (or a normalized sum for the fused A+V gallery);
/// max_unimodal returns the max over the task's two unimodal recalls.
double joint_query_eval(const EmbeddingBundle& bundle, JointTask task, JointStrategy strategy,
                        const std::vector<std::vector<std::size_t>>& positives);

}  // namespace peav::retrieval
