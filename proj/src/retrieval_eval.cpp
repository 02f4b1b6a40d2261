#include "peav/retrieval_eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "peav/numeric.hpp"

namespace peav::retrieval {

void SimMatrix::validate() const {
    if (values.rank() != 2) {
        throw dimension_error("sim matrix: rank-2 values required, got " + values.shape_str());
    }
    const std::size_t q = values.shape()[0], g = values.shape()[1];
    if (row_ids.size() != q || col_ids.size() != g || positives.size() != q) {
        throw dimension_error("sim matrix: id/positive lists disagree with " + values.shape_str());
    }
    for (std::size_t i = 0; i < q; ++i) {
        if (positives[i].empty()) {
            throw config_error("sim matrix: query '" + row_ids[i] + "' has no positives");
        }
        for (std::size_t idx : positives[i]) {
            if (idx >= g) throw config_error("sim matrix: positive index out of range");
        }
    }
}

Tensor dsl_reweight(const Tensor& sims, double sharpen, bool over_gallery_axis) {
    if (sims.rank() != 2) {
        throw dimension_error("dsl_reweight: rank-2 similarities required, got " +
                              sims.shape_str());
    }
    if (sharpen <= 0.0) throw param_error("dsl_reweight: sharpen must be positive");
    Tensor scaled = sims;
    scaled *= sharpen;
    Tensor weights = softmax_axis(scaled, over_gallery_axis ? 1 : 0);
    Tensor out = sims;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= weights[i];
    return out;
}

namespace {

std::vector<std::size_t> top_k_indices(const Tensor& values, std::size_t row, std::size_t k) {
    const std::size_t g = values.shape()[1];
    std::vector<std::size_t> order(g);
    for (std::size_t j = 0; j < g; ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (values.at2(row, a) != values.at2(row, b)) {
            return values.at2(row, a) > values.at2(row, b);
        }
        return a < b;  // deterministic ties by lower gallery index
    });
    order.resize(k);
    return order;
}

}  // namespace

double recall_at_k(const SimMatrix& sims, std::size_t k) {
    sims.validate();
    const std::size_t q = sims.values.shape()[0], g = sims.values.shape()[1];
    if (k < 1 || k > g) {
        throw param_error("recall_at_k: k must lie in [1, gallery size]");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < q; ++i) {
        auto top = top_k_indices(sims.values, i, k);
        const auto& pos = sims.positives[i];
        for (std::size_t idx : top) {
            if (std::find(pos.begin(), pos.end(), idx) != pos.end()) {
                ++hits;
                break;
            }
        }
    }
    return double(hits) / double(q);
}

SimMatrix make_sim_matrix(const Tensor& queries, const Tensor& gallery,
                          const std::vector<std::vector<std::size_t>>& positives) {
    SimMatrix m;
    m.values = matmul_nt(queries, gallery);
    m.positives = positives;
    m.row_ids.resize(queries.shape()[0]);
    m.col_ids.resize(gallery.shape()[0]);
    for (std::size_t i = 0; i < m.row_ids.size(); ++i) m.row_ids[i] = "q" + std::to_string(i);
    for (std::size_t j = 0; j < m.col_ids.size(); ++j) m.col_ids[j] = "g" + std::to_string(j);
    m.validate();
    return m;
}

std::string instantiate_template(const std::string& tmpl, const std::string& class_name) {
    std::string out = tmpl;
    const std::string token = "{c}";
    std::size_t at = out.find(token);
    while (at != std::string::npos) {
        out.replace(at, token.size(), class_name);
        at = out.find(token, at + class_name.size());
    }
    return out;
}

double classify_zero_shot(const Tensor& embeds, const std::vector<std::string>& class_names,
                          const std::vector<std::string>& templates,
                          const std::function<std::vector<double>(const std::string&)>& text_encoder,
                          const std::vector<std::size_t>& labels) {
    if (class_names.empty()) throw param_error("classify_zero_shot: empty class list");
    if (templates.empty()) throw param_error("classify_zero_shot: at least one template required");
    if (embeds.rank() != 2 || labels.size() != embeds.shape()[0]) {
        throw dimension_error("classify_zero_shot: labels disagree with embeddings " +
                              embeds.shape_str());
    }
    const std::size_t n = embeds.shape()[0], ch = embeds.shape()[1];

    Tensor prototypes = Tensor::zeros({class_names.size(), ch});
    for (std::size_t c = 0; c < class_names.size(); ++c) {
        std::vector<double> mean(ch, 0.0);
        for (const std::string& tmpl : templates) {
            std::vector<double> e = text_encoder(instantiate_template(tmpl, class_names[c]));
            if (e.size() != ch) {
                throw dimension_error("classify_zero_shot: encoder returned dim " +
                                      std::to_string(e.size()) + ", expected " +
                                      std::to_string(ch));
            }
            for (std::size_t j = 0; j < ch; ++j) mean[j] += e[j];
        }
        for (std::size_t j = 0; j < ch; ++j) mean[j] /= double(templates.size());
        const double norm = std::max(l2_norm(mean), 1e-12);
        for (std::size_t j = 0; j < ch; ++j) prototypes.at2(c, j) = mean[j] / norm;
    }

    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < class_names.size(); ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < ch; ++j) s += embeds.at2(i, j) * prototypes.at2(c, j);
            if (s > best_score) {
                best_score = s;
                best = c;
            }
        }
        if (labels[i] >= class_names.size()) {
            throw param_error("classify_zero_shot: label out of range");
        }
        if (best == labels[i]) ++correct;
    }
    return double(correct) / double(n);
}

const char* joint_task_name(JointTask t) {
    switch (t) {
        case JointTask::TV_to_A: return "T+V->A";
        case JointTask::TA_to_V: return "T+A->V";
        case JointTask::T_to_AV: return "T->A+V";
        case JointTask::AV_to_T: return "A+V->T";
    }
    return "?";
}

const char* joint_strategy_name(JointStrategy s) {
    return s == JointStrategy::native ? "native" : "max_unimodal";
}

namespace {

double recall1(const Tensor& queries, const Tensor& gallery,
               const std::vector<std::vector<std::size_t>>& positives) {
    return recall_at_k(make_sim_matrix(queries, gallery, positives), 1);
}

Tensor normalized_sum(const Tensor& a, const Tensor& b) {
    Tensor s = a;
    s += b;
    return l2_normalize(s, 1);
}

}  // namespace

double joint_query_eval(const EmbeddingBundle& bundle, JointTask task, JointStrategy strategy,
                        const std::vector<std::vector<std::size_t>>& positives) {
    using ST = StreamTag;
    if (strategy == JointStrategy::native) {
        switch (task) {
            case JointTask::TV_to_A:
                // joint video-with-audio-caption queries against audio
                return recall1(bundle.get(ST::V_AT), bundle.get(ST::A), positives);
            case JointTask::TA_to_V:
                return recall1(bundle.get(ST::A_VT), bundle.get(ST::V), positives);
            case JointTask::T_to_AV:
                return recall1(bundle.get(ST::AVT),
                               normalized_sum(bundle.get(ST::A), bundle.get(ST::V)), positives);
            case JointTask::AV_to_T:
                return recall1(bundle.get(ST::AV), bundle.get(ST::AVT), positives);
        }
    }
    switch (task) {
        case JointTask::TV_to_A:
            return std::max(recall1(bundle.get(ST::AT), bundle.get(ST::A), positives),
                            recall1(bundle.get(ST::V), bundle.get(ST::A), positives));
        case JointTask::TA_to_V:
            return std::max(recall1(bundle.get(ST::VT), bundle.get(ST::V), positives),
                            recall1(bundle.get(ST::A), bundle.get(ST::V), positives));
        case JointTask::T_to_AV:
            return std::max(recall1(bundle.get(ST::AVT), bundle.get(ST::A), positives),
                            recall1(bundle.get(ST::AVT), bundle.get(ST::V), positives));
        case JointTask::AV_to_T:
            return std::max(recall1(bundle.get(ST::A), bundle.get(ST::AVT), positives),
                            recall1(bundle.get(ST::V), bundle.get(ST::AVT), positives));
    }
    throw config_error("joint_query_eval: unknown task");
}

}  // namespace peav::retrieval
