#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "peav/errors.hpp"

namespace peav {

/// Dense row-major tensor of 64-bit floats with an explicit shape.
///
/// All numeric work in the library flows through this type. Shapes are
/// lists of non-negative extents; an empty shape denotes a scalar holding
/// one element. Public factories reject non-finite data so NaN/Inf never
/// enter through the front door.
class Tensor {
public:
    Tensor() = default;

    /// Zero-filled tensor of the given shape.
    static Tensor zeros(std::vector<std::size_t> shape);

    /// Constant-filled tensor.
    static Tensor full(std::vector<std::size_t> shape, double value);

    /// Adopts `data` (row-major); throws dimension_error if the element
    /// count disagrees with the shape and domain_error on non-finite input.
    static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data);

    /// 1-D convenience constructor.
    static Tensor vector(std::vector<double> data);

    /// 2-D convenience constructor from nested initializer lists.
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t axis) const;
    std::size_t size() const { return data_.size(); }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    double& operator[](std::size_t flat) { return data_[flat]; }
    double operator[](std::size_t flat) const { return data_[flat]; }

    // 2-D accessors (checked rank in debug builds only; hot paths).
    double& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    /// "[2x3]" style shape rendering for error messages.
    std::string shape_str() const;

    /// True when every stored value is finite.
    bool all_finite() const;

    /// Row `i` of a rank-2 tensor as a copy.
    std::vector<double> row(std::size_t i) const;

    // In-place elementwise helpers used by optimizers and generators.
    Tensor& operator+=(const Tensor& other);
    Tensor& operator*=(double factor);

private:
    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {}

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);
std::string shape_to_string(const std::vector<std::size_t>& shape);

}  // namespace peav
