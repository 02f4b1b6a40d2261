#pragma once

#include <functional>

#include "peav/tensor.hpp"

namespace peav {

/// c[i,j] = sum_k a[i,k] * b[k,j], accumulated in 64-bit.
/// Throws dimension_error naming both shapes when inner extents differ.
Tensor matmul(const Tensor& a, const Tensor& b);

/// a * b^T for row-major rank-2 operands; the similarity-matrix workhorse.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

/// Softmax along `axis` with max-subtraction; every slice sums to 1.
Tensor softmax_axis(const Tensor& x, std::size_t axis);

/// Numerically stable log(1 + e^x).
double softplus(double x);

/// Numerically stable log(sigmoid(x)) = -softplus(-x). Monotone, <= 0.
double log_sigmoid(double x);

double sigmoid(double x);

/// Normalizes each slice along `axis` to unit L2 norm; slices whose norm
/// falls below eps are scaled by 1/eps instead (degenerate guard).
Tensor l2_normalize(const Tensor& v, std::size_t axis, double eps = 1e-12);

double dot(const std::vector<double>& a, const std::vector<double>& b);
double l2_norm(const std::vector<double>& v);
double cosine(const std::vector<double>& a, const std::vector<double>& b);

/// Central finite differences of a scalar function, coordinate by
/// coordinate: (f(x + h e_i) - f(x - h e_i)) / (2h). The test oracle for
/// every analytic gradient in the library.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                        const Tensor& x, double h = 1e-5);

/// max |a-b| over all elements; shapes must agree.
double max_abs_diff(const Tensor& a, const Tensor& b);

/// max_i |a_i - b_i| / max(1, |a_i|, |b_i|); the gradient-check metric.
double max_rel_diff(const Tensor& a, const Tensor& b);

}  // namespace peav
