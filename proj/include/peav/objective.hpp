#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "peav/embedding.hpp"
#include "peav/tensor.hpp"

namespace peav {

/// One contrastive alignment term between two embedding streams, with its
/// own learnable temperature (kept positive through log-space storage) and
/// bias.
struct LossPairSpec {
    StreamTag left;
    StreamTag right;
    double log_alpha = std::log(10.0);
    double beta = -10.0;
    double weight = 1.0;

    double alpha() const { return std::exp(log_alpha); }
    void set_alpha(double a);
    std::string name() const;  // "A-AT" style
};

enum class RegistryPreset { PRETRAIN_8, FINETUNE_10, CUSTOM };

/// Ordered list of loss pairs. The eight-pair preset covers every
/// modality/caption alignment used in pre-training; fine-tuning adds the
/// two joint-query pairs.
struct PairRegistry {
    std::vector<LossPairSpec> pairs;
    RegistryPreset preset = RegistryPreset::CUSTOM;

    static PairRegistry pretrain8(double alpha_init = 10.0, double beta_init = -10.0);
    static PairRegistry finetune10(double alpha_init = 10.0, double beta_init = -10.0);
    static PairRegistry custom(std::vector<LossPairSpec> pairs);

    /// Unordered (left, right) uniqueness plus preset membership.
    void validate() const;

    /// JSON list of {left, right, alpha, beta, weight}.
    std::string to_json() const;
    static PairRegistry from_json(const std::string& text);
};

/// Loss value and gradients of one sigmoid contrastive pair.
/// d_alpha / d_beta are with respect to the natural (not log) parameters.
struct PairLossResult {
    double loss = 0.0;
    Tensor d_left, d_right;  // B x C_h
    double d_alpha = 0.0;
    double d_beta = 0.0;
};

/// loss = -(1/B) sum_{b,b'} log sigmoid(z_{bb'} (alpha s_{bb'} + beta))
/// with s = h_left h_right^T and z = +1 on the diagonal, -1 elsewhere.
/// `negated_similarity_sign` flips the temperature term to -alpha s + beta,
/// which penalizes aligned pairs instead of rewarding them.
PairLossResult sigmoid_pair_loss(const Tensor& h_left, const Tensor& h_right, double alpha,
                                 double beta, bool negated_similarity_sign = false);

struct MultiPairResult {
    double total = 0.0;
    std::vector<double> per_pair;   // registry order
    StreamGrads stream_grads;       // accumulated across pairs
    std::vector<double> d_alpha;    // per pair, natural-parameter gradients
    std::vector<double> d_beta;
};

/// Weighted sum of every registry pair over one bundle. Gradient
/// contributions from pairs sharing a stream accumulate additively.
MultiPairResult multi_pair_loss(const EmbeddingBundle& bundle, const PairRegistry& registry,
                                bool negated_similarity_sign = false);

/// Plain SGD with momentum. Velocity buffers are keyed by parameter name;
/// a non-finite gradient aborts the step with a diagnostic.
///
/// The scalar pair parameters take a reduced step: the log-space chain rule
/// multiplies temperature gradients by alpha itself, and at momentum 0.9 a
/// full-size step overshoots log-alpha into a dead zone where the pair's
/// gradients vanish. log-alpha is additionally kept inside [ln 1e-3, ln 1e3]
/// so a stunned pair can recover.
class SgdOptimizer {
public:
    explicit SgdOptimizer(double lr, double momentum = 0.9) : lr_(lr), momentum_(momentum) {}

    void step(const std::string& name, Tensor& param, const Tensor& grad);
    void step_scalar(const std::string& name, double& param, double grad);

    /// Updates a pair's (alpha, beta); alpha moves in log-space so it
    /// stays positive. d_alpha is w.r.t. the natural parameter.
    void step_pair(const std::string& name, LossPairSpec& pair, double d_alpha, double d_beta);

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    double pair_lr_scale = 0.1;

private:
    double lr_;
    double momentum_;
    std::map<std::string, std::vector<double>> velocity_;
};

}  // namespace peav
