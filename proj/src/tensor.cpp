#include "peav/tensor.hpp"

#include <cmath>
#include <sstream>

namespace peav {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    std::size_t n = shape_product(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    if (!std::isfinite(value)) throw domain_error("Tensor::full: non-finite fill value");
    std::size_t n = shape_product(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> data) {
    if (shape_product(shape) != data.size()) {
        throw dimension_error("Tensor::from_data: shape " + shape_to_string(shape) +
                              " does not hold " + std::to_string(data.size()) + " elements");
    }
    for (double v : data) {
        if (!std::isfinite(v)) throw domain_error("Tensor::from_data: non-finite element");
    }
    return Tensor(std::move(shape), std::move(data));
}

Tensor Tensor::vector(std::vector<double> data) {
    std::size_t n = data.size();
    return from_data({n}, std::move(data));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw dimension_error("Tensor::matrix: ragged rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return from_data({r, c}, std::move(data));
}

std::size_t Tensor::extent(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw dimension_error("Tensor::extent: axis " + std::to_string(axis) +
                              " out of range for shape " + shape_str());
    }
    return shape_[axis];
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::vector<double> Tensor::row(std::size_t i) const {
    if (rank() != 2) throw dimension_error("Tensor::row: rank-2 tensor required, got " + shape_str());
    auto begin = data_.begin() + static_cast<std::ptrdiff_t>(i * shape_[1]);
    return std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(shape_[1]));
}

Tensor& Tensor::operator+=(const Tensor& other) {
    if (!same_shape(other)) {
        throw dimension_error("Tensor::operator+=: shape " + shape_str() + " vs " + other.shape_str());
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double factor) {
    for (double& v : data_) v *= factor;
    return *this;
}

}  // namespace peav
