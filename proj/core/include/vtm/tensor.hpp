#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace vtm {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles.
///
/// A Tensor is a plain value: copying it copies the data. Gradients are
/// tracked by the Graph that consumes it, not by the tensor itself; the
/// optional grad buffer is only a convenience slot for callers that want to
/// stash one next to the data.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape);
    static Tensor filled(Shape shape, double value);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    /// Same data, new shape. Throws if the element counts differ.
    Tensor reshaped(Shape shape) const&;
    Tensor reshaped(Shape shape) &&;

    bool has_grad() const { return !grad_.empty(); }
    std::span<double> grad() { return grad_; }
    std::span<const double> grad() const { return grad_; }
    void set_grad(std::vector<double> grad);
    void clear_grad() { grad_.clear(); }

    bool all_finite() const;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<double> data_;
    std::vector<double> grad_;
};

/// Builds a tensor from explicit values; throws std::invalid_argument when
/// the value count does not match the shape.
Tensor tensor_from(Shape shape, std::vector<double> values);

}  // namespace vtm
