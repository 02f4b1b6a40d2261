#include "peav/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace peav {

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw dimension_error("matmul: rank-2 operands required, got " + a.shape_str() + " and " +
                              b.shape_str());
    }
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const std::size_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) {
        throw dimension_error("matmul: inner extents differ: " + a.shape_str() + " x " +
                              b.shape_str());
    }
    Tensor c = Tensor::zeros({m, n});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* pc = c.data().data();
    // i-k-j order keeps both b and c accesses contiguous.
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = pa[i * k + kk];
            if (aik == 0.0) continue;
            const double* brow = pb + kk * n;
            double* crow = pc + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw dimension_error("matmul_nt: rank-2 operands required, got " + a.shape_str() +
                              " and " + b.shape_str());
    }
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const std::size_t n = b.shape()[0], k2 = b.shape()[1];
    if (k != k2) {
        throw dimension_error("matmul_nt: inner extents differ: " + a.shape_str() + " x " +
                              b.shape_str() + "^T");
    }
    Tensor c = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data().data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b.data().data() + j * k;
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            c.at2(i, j) = acc;
        }
    }
    return c;
}

namespace {

// Decomposes a shape around `axis` into (outer, extent, inner) so that the
// flat index of element (o, e, i) is (o * extent + e) * inner + i.
struct AxisView {
    std::size_t outer = 1, extent = 0, inner = 1;
};

AxisView axis_view(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) {
        throw dimension_error("axis " + std::to_string(axis) + " out of range for " +
                              x.shape_str());
    }
    AxisView v;
    for (std::size_t d = 0; d < axis; ++d) v.outer *= x.shape()[d];
    v.extent = x.shape()[axis];
    for (std::size_t d = axis + 1; d < x.rank(); ++d) v.inner *= x.shape()[d];
    return v;
}

}  // namespace

Tensor softmax_axis(const Tensor& x, std::size_t axis) {
    AxisView v = axis_view(x, axis);
    if (v.extent == 0) throw domain_error("softmax_axis: empty extent along axis");
    Tensor y = Tensor::zeros(x.shape());
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t i = 0; i < v.inner; ++i) {
            const std::size_t base = o * v.extent * v.inner + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t e = 0; e < v.extent; ++e) mx = std::max(mx, x[base + e * v.inner]);
            double sum = 0.0;
            for (std::size_t e = 0; e < v.extent; ++e) {
                double t = std::exp(x[base + e * v.inner] - mx);
                y.data()[base + e * v.inner] = t;
                sum += t;
            }
            for (std::size_t e = 0; e < v.extent; ++e) y.data()[base + e * v.inner] /= sum;
        }
    }
    return y;
}

double softplus(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

double log_sigmoid(double x) { return -softplus(-x); }

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

Tensor l2_normalize(const Tensor& v, std::size_t axis, double eps) {
    if (eps <= 0.0) throw param_error("l2_normalize: eps must be positive");
    AxisView view = axis_view(v, axis);
    Tensor y = Tensor::zeros(v.shape());
    for (std::size_t o = 0; o < view.outer; ++o) {
        for (std::size_t i = 0; i < view.inner; ++i) {
            const std::size_t base = o * view.extent * view.inner + i;
            double sq = 0.0;
            for (std::size_t e = 0; e < view.extent; ++e) {
                double t = v[base + e * view.inner];
                sq += t * t;
            }
            double norm = std::sqrt(sq);
            double scale = 1.0 / std::max(norm, eps);
            for (std::size_t e = 0; e < view.extent; ++e) {
                y.data()[base + e * view.inner] = v[base + e * view.inner] * scale;
            }
        }
    }
    return y;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double l2_norm(const std::vector<double>& v) { return std::sqrt(dot(v, v)); }

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double na = l2_norm(a), nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h) {
    if (h <= 0.0) throw param_error("finite_diff_grad: h must be positive");
    Tensor g = Tensor::zeros(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        double fp = f(probe);
        probe[i] = orig - h;
        double fm = f(probe);
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw domain_error("finite_diff_grad: non-finite function value at coordinate " +
                               std::to_string(i));
        }
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw dimension_error("max_abs_diff: shape " + a.shape_str() + " vs " + b.shape_str());
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double max_rel_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw dimension_error("max_rel_diff: shape " + a.shape_str() + " vs " + b.shape_str());
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double denom = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
        m = std::max(m, std::abs(a[i] - b[i]) / denom);
    }
    return m;
}

}  // namespace peav
