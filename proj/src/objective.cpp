#include "peav/objective.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "peav/numeric.hpp"

namespace peav {

void LossPairSpec::set_alpha(double a) {
    if (a <= 0.0) throw domain_error("loss pair: alpha must be positive");
    log_alpha = std::log(a);
}

std::string LossPairSpec::name() const {
    return std::string(stream_tag_name(left)) + "-" + stream_tag_name(right);
}

namespace {

LossPairSpec make_pair(StreamTag left, StreamTag right, double alpha, double beta) {
    LossPairSpec p;
    p.left = left;
    p.right = right;
    p.set_alpha(alpha);
    p.beta = beta;
    return p;
}

}  // namespace

PairRegistry PairRegistry::pretrain8(double alpha_init, double beta_init) {
    PairRegistry r;
    r.preset = RegistryPreset::PRETRAIN_8;
    r.pairs = {
        make_pair(StreamTag::A, StreamTag::AT, alpha_init, beta_init),
        make_pair(StreamTag::A, StreamTag::V, alpha_init, beta_init),
        make_pair(StreamTag::A, StreamTag::AVT, alpha_init, beta_init),
        make_pair(StreamTag::AV, StreamTag::AT, alpha_init, beta_init),
        make_pair(StreamTag::AV, StreamTag::AVT, alpha_init, beta_init),
        make_pair(StreamTag::V, StreamTag::AT, alpha_init, beta_init),
        make_pair(StreamTag::V, StreamTag::VT, alpha_init, beta_init),
        make_pair(StreamTag::V, StreamTag::AVT, alpha_init, beta_init),
    };
    return r;
}

PairRegistry PairRegistry::finetune10(double alpha_init, double beta_init) {
    PairRegistry r = pretrain8(alpha_init, beta_init);
    r.preset = RegistryPreset::FINETUNE_10;
    r.pairs.push_back(make_pair(StreamTag::A_VT, StreamTag::V, alpha_init, beta_init));
    r.pairs.push_back(make_pair(StreamTag::V_AT, StreamTag::A, alpha_init, beta_init));
    return r;
}

PairRegistry PairRegistry::custom(std::vector<LossPairSpec> pairs) {
    PairRegistry r;
    r.preset = RegistryPreset::CUSTOM;
    r.pairs = std::move(pairs);
    r.validate();
    return r;
}

void PairRegistry::validate() const {
    std::set<std::pair<int, int>> seen;
    for (const LossPairSpec& p : pairs) {
        if (p.alpha() <= 0.0) throw config_error("registry: alpha must be positive");
        if (p.weight < 0.0) throw config_error("registry: weight must be >= 0");
        int a = static_cast<int>(p.left), b = static_cast<int>(p.right);
        auto key = std::minmax(a, b);
        if (!seen.insert({key.first, key.second}).second) {
            throw config_error("registry: duplicate pair " + p.name());
        }
    }
    auto expect = [&](std::size_t n, const char* what) {
        if (pairs.size() != n) {
            throw config_error(std::string("registry: ") + what + " preset requires " +
                               std::to_string(n) + " pairs, got " + std::to_string(pairs.size()));
        }
    };
    if (preset == RegistryPreset::PRETRAIN_8) expect(8, "PRETRAIN_8");
    if (preset == RegistryPreset::FINETUNE_10) expect(10, "FINETUNE_10");
}

std::string PairRegistry::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const LossPairSpec& p : pairs) {
        arr.push_back({{"left", stream_tag_name(p.left)},
                       {"right", stream_tag_name(p.right)},
                       {"alpha", p.alpha()},
                       {"beta", p.beta},
                       {"weight", p.weight}});
    }
    return arr.dump();
}

PairRegistry PairRegistry::from_json(const std::string& text) {
    nlohmann::json arr;
    try {
        arr = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("registry json: ") + e.what());
    }
    std::vector<LossPairSpec> pairs;
    for (const auto& item : arr) {
        auto left = stream_tag_from_name(item.at("left").get<std::string>());
        auto right = stream_tag_from_name(item.at("right").get<std::string>());
        if (!left || !right) throw config_error("registry json: unknown stream tag");
        LossPairSpec p;
        p.left = *left;
        p.right = *right;
        p.set_alpha(item.at("alpha").get<double>());
        p.beta = item.at("beta").get<double>();
        p.weight = item.value("weight", 1.0);
        pairs.push_back(p);
    }
    return custom(std::move(pairs));
}

PairLossResult sigmoid_pair_loss(const Tensor& h_left, const Tensor& h_right, double alpha,
                                 double beta, bool negated_similarity_sign) {
    if (h_left.rank() != 2 || h_right.rank() != 2 || !h_left.same_shape(h_right)) {
        throw dimension_error("sigmoid_pair_loss: operand shapes " + h_left.shape_str() +
                              " vs " + h_right.shape_str());
    }
    const std::size_t b = h_left.shape()[0], c = h_left.shape()[1];
    if (b == 0) throw domain_error("sigmoid_pair_loss: empty batch");
    if (!h_left.all_finite() || !h_right.all_finite()) {
        throw domain_error("sigmoid_pair_loss: non-finite input");
    }
    if (alpha <= 0.0) throw domain_error("sigmoid_pair_loss: alpha must be positive");

    const double sim_sign = negated_similarity_sign ? -1.0 : 1.0;
    Tensor s = matmul_nt(h_left, h_right);

    PairLossResult out;
    out.d_left = Tensor::zeros({b, c});
    out.d_right = Tensor::zeros({b, c});
    const double inv_b = 1.0 / double(b);
    Tensor ds = Tensor::zeros({b, b});
    double loss = 0.0, d_alpha = 0.0, d_beta = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < b; ++j) {
            const double z = (i == j) ? 1.0 : -1.0;
            const double logit = z * (sim_sign * alpha * s.at2(i, j) + beta);
            loss += -log_sigmoid(logit) * inv_b;
            // d(-log sigmoid(t))/dt = -sigmoid(-t)
            const double dt = -sigmoid(-logit) * inv_b;
            ds.at2(i, j) = dt * z * sim_sign * alpha;
            d_alpha += dt * z * sim_sign * s.at2(i, j);
            d_beta += dt * z;
        }
    }
    // chain to the embeddings: dL/dh_left = dS h_right, dL/dh_right = dS^T h_left
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < b; ++j) {
            const double g = ds.at2(i, j);
            if (g == 0.0) continue;
            for (std::size_t k = 0; k < c; ++k) {
                out.d_left.at2(i, k) += g * h_right.at2(j, k);
                out.d_right.at2(j, k) += g * h_left.at2(i, k);
            }
        }
    }
    out.loss = loss;
    out.d_alpha = d_alpha;
    out.d_beta = d_beta;
    return out;
}

MultiPairResult multi_pair_loss(const EmbeddingBundle& bundle, const PairRegistry& registry,
                                bool negated_similarity_sign) {
    registry.validate();
    for (const LossPairSpec& p : registry.pairs) {
        if (!bundle.has(p.left) || !bundle.has(p.right)) {
            throw config_error("multi_pair_loss: pair " + p.name() +
                               " references a stream missing from the bundle");
        }
    }
    MultiPairResult out;
    for (const LossPairSpec& p : registry.pairs) {
        PairLossResult r = sigmoid_pair_loss(bundle.get(p.left), bundle.get(p.right), p.alpha(),
                                             p.beta, negated_similarity_sign);
        out.per_pair.push_back(r.loss);
        out.total += p.weight * r.loss;
        out.d_alpha.push_back(p.weight * r.d_alpha);
        out.d_beta.push_back(p.weight * r.d_beta);
        if (p.weight != 0.0) {
            r.d_left *= p.weight;
            r.d_right *= p.weight;
            accumulate_stream_grad(out.stream_grads, p.left, r.d_left);
            accumulate_stream_grad(out.stream_grads, p.right, r.d_right);
        }
    }
    return out;
}

void SgdOptimizer::step(const std::string& name, Tensor& param, const Tensor& grad) {
    if (!param.same_shape(grad)) {
        throw dimension_error("sgd step '" + name + "': param " + param.shape_str() +
                              " vs grad " + grad.shape_str());
    }
    if (!grad.all_finite()) {
        throw domain_error("sgd step '" + name + "': non-finite gradient");
    }
    auto& vel = velocity_[name];
    if (vel.size() != param.size()) vel.assign(param.size(), 0.0);
    for (std::size_t i = 0; i < param.size(); ++i) {
        vel[i] = momentum_ * vel[i] + grad[i];
        param[i] -= lr_ * vel[i];
    }
}

void SgdOptimizer::step_scalar(const std::string& name, double& param, double grad) {
    if (!std::isfinite(grad)) {
        throw domain_error("sgd step '" + name + "': non-finite gradient");
    }
    auto& vel = velocity_[name];
    if (vel.size() != 1) vel.assign(1, 0.0);
    vel[0] = momentum_ * vel[0] + grad;
    param -= lr_ * vel[0];
}

void SgdOptimizer::step_pair(const std::string& name, LossPairSpec& pair, double d_alpha,
                             double d_beta) {
    const double lr = lr_;
    lr_ = lr * pair_lr_scale;
    // chain rule into log space: dL/dlog_alpha = alpha * dL/dalpha
    step_scalar(name + ".log_alpha", pair.log_alpha, pair.alpha() * d_alpha);
    step_scalar(name + ".beta", pair.beta, d_beta);
    lr_ = lr;
    pair.log_alpha = std::clamp(pair.log_alpha, std::log(1e-3), std::log(1e3));
}

}  // namespace peav
