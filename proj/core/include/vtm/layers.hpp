#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "vtm/autograd.hpp"
#include "vtm/tensor.hpp"

namespace vtm {

enum class Activation { relu };
inline constexpr Activation kEncoderActivation = Activation::relu;

enum class InitScheme {
    uniform_fan_in,  ///< U(-sqrt(1/fan_in), +sqrt(1/fan_in))
    he_uniform,      ///< U(-sqrt(6/fan_in), +sqrt(6/fan_in)), variance-preserving under ReLU
};

/// Weights [out_ch, in_ch, kh, kw], bias [out_ch].
struct Conv2dLayer {
    Tensor weights;
    Tensor bias;
    std::size_t stride = 1;
    std::size_t padding = 1;

    std::size_t in_channels() const { return weights.dim(1); }
    std::size_t out_channels() const { return weights.dim(0); }
};

/// Weights [in_dim, out_dim], bias [out_dim].
struct DenseLayer {
    Tensor weights;
    Tensor bias;

    std::size_t in_dim() const { return weights.dim(0); }
    std::size_t out_dim() const { return weights.dim(1); }
};

/// Raw op: x [B,C,H,W], w [O,C,kh,kw], b [O] -> [B,O,H',W'].
Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t padding);
Var conv2d_forward(Graph& g, const Conv2dLayer& layer, Var x);

/// 2x2 window, stride 2. Backward routes to the first maximum in row-major
/// window order.
Var maxpool2d(Var x);

Var relu(Var x);
Var activate(Var x, Activation a);

/// x [B,in] -> x W + b.
Var dense_forward(Graph& g, const DenseLayer& layer, Var x);

enum class Reduction { sum, mean };

/// Softmax cross-entropy over K classes with per-row integer targets.
Var cross_entropy(Var logits, std::span<const std::size_t> targets, Reduction reduction);

/// Two-class head loss: mean over the batch, targets in {0,1}.
Var softmax_cross_entropy(Var logits, std::span<const int> targets);

/// Max-subtracted softmax of one row.
std::vector<double> softmax(std::span<const double> logits);

/// Seeded i.i.d. uniform initialization. Fan-in defaults to the product of
/// all but the leading dim for rank 4 and to dim 0 for rank <= 2.
Tensor init_params(const Shape& shape, std::uint64_t seed, InitScheme scheme,
                   std::optional<std::size_t> fan_in = std::nullopt);

Conv2dLayer make_conv(std::size_t in_ch, std::size_t out_ch, std::uint64_t seed, InitScheme scheme);
DenseLayer make_dense(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed, InitScheme scheme);

}  // namespace vtm
