#include "vtm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vtm {

std::size_t shape_numel(const Shape& shape)
{
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape)
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values))
{
    if (shape_.empty())
        throw std::invalid_argument("tensor: rank must be at least 1");
    for (auto d : shape_)
        if (d == 0) throw std::invalid_argument("tensor: zero dimension in " + shape_str(shape_));
    if (shape_numel(shape_) != data_.size())
        throw std::invalid_argument("tensor: shape " + shape_str(shape_) + " needs " +
                                    std::to_string(shape_numel(shape_)) + " values, got " +
                                    std::to_string(data_.size()));
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value)
{
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::reshaped(Shape shape) const&
{
    Tensor copy = *this;
    return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) &&
{
    if (shape_numel(shape) != data_.size())
        throw std::invalid_argument("reshape: " + shape_str(shape_) + " -> " + shape_str(shape));
    return Tensor(std::move(shape), std::move(data_));
}

void Tensor::set_grad(std::vector<double> grad)
{
    if (grad.size() != data_.size())
        throw std::invalid_argument("tensor: gradient size mismatch");
    grad_ = std::move(grad);
}

bool Tensor::all_finite() const
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor tensor_from(Shape shape, std::vector<double> values)
{
    return Tensor(std::move(shape), std::move(values));
}

}  // namespace vtm
