#include "vtm/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace vtm {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

struct ConvGeometry {
    std::size_t batch, in_ch, h, w, out_ch, kh, kw, stride, pad, oh, ow;

    std::size_t patch() const { return in_ch * kh * kw; }
    std::size_t pixels() const { return oh * ow; }
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
                           std::size_t pad)
{
    if (x.rank() != 4) throw std::invalid_argument("conv2d: input must be [B,C,H,W], got " + shape_str(x.shape()));
    if (w.rank() != 4) throw std::invalid_argument("conv2d: weights must be [O,C,kh,kw], got " + shape_str(w.shape()));
    if (b.rank() != 1 || b.dim(0) != w.dim(0)) throw std::invalid_argument("conv2d: bias must be [O]");
    if (x.dim(1) != w.dim(1))
        throw std::invalid_argument("conv2d: channel mismatch, input has " + std::to_string(x.dim(1)) +
                                    ", weights expect " + std::to_string(w.dim(1)));
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
    ConvGeometry gm{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), stride, pad, 0, 0};
    const auto ph = gm.h + 2 * pad, pw = gm.w + 2 * pad;
    if (ph < gm.kh || pw < gm.kw) throw std::invalid_argument("conv2d: kernel larger than padded input");
    if ((ph - gm.kh) % stride != 0 || (pw - gm.kw) % stride != 0)
        throw std::invalid_argument("conv2d: output size is not an integer for this stride");
    gm.oh = (ph - gm.kh) / stride + 1;
    gm.ow = (pw - gm.kw) / stride + 1;
    return gm;
}

// cols [C*kh*kw, oh*ow] for one image.
void im2col(const ConvGeometry& gm, const double* img, double* cols)
{
    for (std::size_t c = 0; c < gm.in_ch; ++c)
        for (std::size_t ki = 0; ki < gm.kh; ++ki)
            for (std::size_t kj = 0; kj < gm.kw; ++kj) {
                double* row = cols + ((c * gm.kh + ki) * gm.kw + kj) * gm.pixels();
                const double* plane = img + c * gm.h * gm.w;
                for (std::size_t oy = 0; oy < gm.oh; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * gm.stride + ki) - static_cast<std::ptrdiff_t>(gm.pad);
                    double* dst = row + oy * gm.ow;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(gm.h)) {
                        std::fill_n(dst, gm.ow, 0.0);
                        continue;
                    }
                    const double* src = plane + iy * gm.w;
                    for (std::size_t ox = 0; ox < gm.ow; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * gm.stride + kj) - static_cast<std::ptrdiff_t>(gm.pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(gm.w)) ? 0.0 : src[ix];
                    }
                }
            }
}

void col2im(const ConvGeometry& gm, const double* cols, double* img)
{
    for (std::size_t c = 0; c < gm.in_ch; ++c)
        for (std::size_t ki = 0; ki < gm.kh; ++ki)
            for (std::size_t kj = 0; kj < gm.kw; ++kj) {
                const double* row = cols + ((c * gm.kh + ki) * gm.kw + kj) * gm.pixels();
                double* plane = img + c * gm.h * gm.w;
                for (std::size_t oy = 0; oy < gm.oh; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * gm.stride + ki) - static_cast<std::ptrdiff_t>(gm.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(gm.h)) continue;
                    const double* src = row + oy * gm.ow;
                    double* dst = plane + iy * gm.w;
                    for (std::size_t ox = 0; ox < gm.ow; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * gm.stride + kj) - static_cast<std::ptrdiff_t>(gm.pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(gm.w)) dst[ix] += src[ox];
                    }
                }
            }
}

}  // namespace

Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t padding)
{
    const auto& xv = x.value();
    const auto& wv = w.value();
    const auto& bv = b.value();
    const auto gm = conv_geometry(xv, wv, bv, stride, padding);

    Tensor out = Tensor::zeros({gm.batch, gm.out_ch, gm.oh, gm.ow});
    std::vector<double> cols(gm.patch() * gm.pixels());
    ConstMap wmat(wv.data().data(), gm.out_ch, gm.patch());
    for (std::size_t n = 0; n < gm.batch; ++n) {
        im2col(gm, xv.data().data() + n * gm.in_ch * gm.h * gm.w, cols.data());
        MutMap o(out.data().data() + n * gm.out_ch * gm.pixels(), gm.out_ch, gm.pixels());
        o.noalias() = wmat * ConstMap(cols.data(), gm.patch(), gm.pixels());
        for (std::size_t oc = 0; oc < gm.out_ch; ++oc) o.row(oc).array() += bv[oc];
    }

    return x.graph->record("conv2d", std::move(out), {x, w, b},
                           [gm](std::span<const double> go, BackwardContext& ctx) {
        const auto& xin = ctx.input(0);
        const auto& win = ctx.input(1);
        ConstMap wmat(win.data().data(), gm.out_ch, gm.patch());
        std::vector<double> cols(gm.patch() * gm.pixels());
        const bool want_x = ctx.wants(0), want_w = ctx.wants(1), want_b = ctx.wants(2);
        auto gx = want_x ? ctx.grad(0) : std::span<double>{};
        auto gw = want_w ? ctx.grad(1) : std::span<double>{};
        auto gb = want_b ? ctx.grad(2) : std::span<double>{};
        for (std::size_t n = 0; n < gm.batch; ++n) {
            ConstMap dout(go.data() + n * gm.out_ch * gm.pixels(), gm.out_ch, gm.pixels());
            if (want_b)
                for (std::size_t oc = 0; oc < gm.out_ch; ++oc) {
                    const double* row = go.data() + (n * gm.out_ch + oc) * gm.pixels();
                    double acc = 0.0;
                    for (std::size_t i = 0; i < gm.pixels(); ++i) acc += row[i];
                    gb[oc] += acc;
                }
            if (want_w) {
                im2col(gm, xin.data().data() + n * gm.in_ch * gm.h * gm.w, cols.data());
                MutMap(gw.data(), gm.out_ch, gm.patch()).noalias() +=
                    dout * ConstMap(cols.data(), gm.patch(), gm.pixels()).transpose();
            }
            if (want_x) {
                MutMap(cols.data(), gm.patch(), gm.pixels()).noalias() = wmat.transpose() * dout;
                col2im(gm, cols.data(), gx.data() + n * gm.in_ch * gm.h * gm.w);
            }
        }
    });
}

Var conv2d_forward(Graph& g, const Conv2dLayer& layer, Var x)
{
    return conv2d(x, g.parameter(layer.weights), g.parameter(layer.bias), layer.stride, layer.padding);
}

Var maxpool2d(Var x)
{
    const auto& xv = x.value();
    if (xv.rank() != 4) throw std::invalid_argument("maxpool2d: input must be [B,C,H,W], got " + shape_str(xv.shape()));
    const auto planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    if (h % 2 != 0 || w % 2 != 0)
        throw std::invalid_argument("maxpool2d: spatial dims must be even, got " + shape_str(xv.shape()));
    const auto oh = h / 2, ow = w / 2;
    Tensor out = Tensor::zeros({xv.dim(0), xv.dim(1), oh, ow});
    std::vector<std::uint32_t> argmax(out.size());
    std::vector<std::uint8_t> window_pick(x.graph->branch_tracking() ? out.size() : 0);
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = xv.data().data() + p * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::size_t o = (p * oh + oy) * ow + ox;
                std::uint32_t best = static_cast<std::uint32_t>(2 * oy * w + 2 * ox);
                std::uint8_t pick = 0;
                for (std::uint8_t k = 1; k < 4; ++k) {
                    const auto cand = static_cast<std::uint32_t>((2 * oy + k / 2) * w + 2 * ox + k % 2);
                    if (src[cand] > src[best]) {
                        best = cand;
                        pick = k;
                    }
                }
                out[o] = src[best];
                argmax[o] = static_cast<std::uint32_t>(p * h * w) + best;
                if (!window_pick.empty()) window_pick[o] = pick;
            }
    }
    if (!window_pick.empty()) x.graph->note_branch(fnv1a(window_pick));
    return x.graph->record("maxpool2d", std::move(out), {x},
                           [argmax = std::move(argmax)](std::span<const double> go, BackwardContext& ctx) {
                               auto g = ctx.grad(0);
                               for (std::size_t i = 0; i < go.size(); ++i) g[argmax[i]] += go[i];
                           });
}

Var relu(Var x)
{
    const auto& xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    if (x.graph->branch_tracking()) {
        std::vector<std::uint8_t> mask(out.size());
        for (std::size_t i = 0; i < out.size(); ++i) mask[i] = xv[i] > 0.0;
        x.graph->note_branch(fnv1a(mask));
    }
    return x.graph->record("relu", Tensor(xv.shape(), std::move(out)), {x},
                           [](std::span<const double> go, BackwardContext& ctx) {
                               const auto& in = ctx.input(0);
                               auto g = ctx.grad(0);
                               for (std::size_t i = 0; i < go.size(); ++i)
                                   if (in[i] > 0.0) g[i] += go[i];
                           });
}

Var activate(Var x, Activation a)
{
    switch (a) {
    case Activation::relu: return relu(x);
    }
    throw std::invalid_argument("activate: unknown activation");
}

Var dense_forward(Graph& g, const DenseLayer& layer, Var x)
{
    const auto& xv = x.value();
    if (xv.rank() != 2 || xv.dim(1) != layer.in_dim())
        throw std::invalid_argument("dense: expected [B," + std::to_string(layer.in_dim()) + "], got " +
                                    shape_str(xv.shape()));
    Var xw = matmul(x, g.parameter(layer.weights));
    return add(xw, tile_rows(g.parameter(layer.bias), xv.dim(0)));
}

std::vector<double> softmax(std::span<const double> logits)
{
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) z += (p[k] = std::exp(logits[k] - mx));
    for (auto& v : p) v /= z;
    return p;
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets, Reduction reduction)
{
    const auto& lv = logits.value();
    if (lv.rank() != 2) throw std::invalid_argument("cross_entropy: logits must be [B,K], got " + shape_str(lv.shape()));
    const auto rows = lv.dim(0), k = lv.dim(1);
    if (targets.size() != rows) throw std::invalid_argument("cross_entropy: one target per row required");
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (tgt[r] >= k) throw std::invalid_argument("cross_entropy: target " + std::to_string(tgt[r]) + " out of range");
        const double* row = lv.data().data() + r * k;
        const double mx = *std::max_element(row, row + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        total += std::log(z) + mx - row[tgt[r]];
    }
    const double norm = reduction == Reduction::mean ? 1.0 / static_cast<double>(rows) : 1.0;
    return logits.graph->record("cross_entropy", Tensor({1}, {total * norm}), {logits},
                                [tgt = std::move(tgt), k, norm](std::span<const double> go, BackwardContext& ctx) {
                                    const auto& in = ctx.input(0);
                                    auto g = ctx.grad(0);
                                    for (std::size_t r = 0; r < tgt.size(); ++r) {
                                        auto p = softmax(in.data().subspan(r * k, k));
                                        p[tgt[r]] -= 1.0;
                                        for (std::size_t j = 0; j < k; ++j) g[r * k + j] += go[0] * norm * p[j];
                                    }
                                });
}

Var softmax_cross_entropy(Var logits, std::span<const int> targets)
{
    const auto& lv = logits.value();
    if (lv.rank() != 2 || lv.dim(1) != 2)
        throw std::invalid_argument("softmax_cross_entropy: logits must be [B,2], got " + shape_str(lv.shape()));
    if (targets.empty()) throw std::invalid_argument("softmax_cross_entropy: empty batch");
    std::vector<std::size_t> t(targets.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (targets[i] != 0 && targets[i] != 1)
            throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(targets[i]) + " is not 0 or 1");
        t[i] = static_cast<std::size_t>(targets[i]);
    }
    return cross_entropy(logits, t, Reduction::mean);
}

Tensor init_params(const Shape& shape, std::uint64_t seed, InitScheme scheme, std::optional<std::size_t> fan_in)
{
    if (shape.empty()) throw std::invalid_argument("init_params: empty shape");
    std::size_t fan = 0;
    if (fan_in) {
        fan = *fan_in;
    } else if (shape.size() >= 3) {
        fan = shape_numel(shape) / shape[0];
    } else {
        fan = shape[0];
    }
    if (fan == 0) throw std::invalid_argument("init_params: fan-in must be positive");
    const double gain = scheme == InitScheme::he_uniform ? 6.0 : 1.0;
    const double bound = std::sqrt(gain / static_cast<double>(fan));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(shape, std::move(v));
}

Conv2dLayer make_conv(std::size_t in_ch, std::size_t out_ch, std::uint64_t seed, InitScheme scheme)
{
    Conv2dLayer l;
    l.weights = init_params({out_ch, in_ch, 3, 3}, seed, scheme);
    l.bias = init_params({out_ch}, seed ^ 0x9e3779b97f4a7c15ull, InitScheme::uniform_fan_in, in_ch * 9);
    return l;
}

DenseLayer make_dense(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed, InitScheme scheme)
{
    DenseLayer l;
    l.weights = init_params({in_dim, out_dim}, seed, scheme);
    l.bias = init_params({out_dim}, seed ^ 0x9e3779b97f4a7c15ull, InitScheme::uniform_fan_in, in_dim);
    return l;
}

}  // namespace vtm
