#include "vtm/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace vtm {

namespace {

std::atomic<std::uint64_t> next_graph_uid{1};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

}  // namespace

const Tensor& Var::value() const
{
    if (!graph) throw std::logic_error("var: not attached to a graph");
    return graph->value(*this);
}

std::span<const double> Gradients::of(const Tensor& param) const
{
    auto* g = find(param);
    if (!g) throw std::out_of_range("gradients: tensor was not registered as a parameter");
    return *g;
}

std::span<const double> Gradients::of(Var v) const
{
    if (!v.graph || v.graph->uid() != graph_uid_)
        throw std::invalid_argument("gradients: var belongs to a different graph");
    auto* g = find(v.id);
    if (!g) throw std::out_of_range("gradients: no gradient for node " + std::to_string(v.id));
    return *g;
}

const std::vector<double>* Gradients::find(const Tensor& param) const
{
    auto it = param_nodes_.find(&param);
    return it == param_nodes_.end() ? nullptr : find(it->second);
}

const std::vector<double>* Gradients::find(std::size_t node_id) const
{
    auto it = by_node_.find(node_id);
    return it == by_node_.end() ? nullptr : &it->second;
}

const Tensor& BackwardContext::input(std::size_t slot) const
{
    return graph_.nodes_[inputs_.at(slot)].value();
}

const Tensor& BackwardContext::output() const { return graph_.nodes_[node_].value(); }

bool BackwardContext::wants(std::size_t slot) const
{
    return graph_.nodes_[inputs_.at(slot)].requires_grad;
}

std::span<double> BackwardContext::grad(std::size_t slot)
{
    auto id = inputs_.at(slot);
    auto& g = grads_[id];
    if (g.empty()) g.assign(graph_.nodes_[id].value().size(), 0.0);
    return g;
}

Graph::Graph(GradMode mode) : mode_(mode), uid_(next_graph_uid++) {}

Var Graph::constant(Tensor value)
{
    Node n;
    n.op = "constant";
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Graph::parameter(const Tensor& param)
{
    if (auto it = params_.find(&param); it != params_.end()) return {this, it->second};
    Node n;
    n.op = "parameter";
    n.borrowed = &param;
    n.requires_grad = grad_enabled();
    n.is_param = true;
    nodes_.push_back(std::move(n));
    params_.emplace(&param, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
}

Var Graph::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
                  BackwardFn backward)
{
    Node n;
    n.op = op;
    n.owned = std::move(value);
    n.inputs.reserve(inputs.size());
    for (auto v : inputs) {
        check_var(v);
        n.inputs.push_back(v.id);
        n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

void Graph::check_var(Var v) const
{
    if (v.graph != this || v.id >= nodes_.size())
        throw std::invalid_argument("graph: var belongs to a different graph");
}

const Tensor& Graph::value(Var v) const
{
    check_var(v);
    return nodes_[v.id].value();
}

std::string_view Graph::op(Var v) const
{
    check_var(v);
    return nodes_[v.id].op;
}

bool Graph::requires_grad(Var v) const
{
    check_var(v);
    return nodes_[v.id].requires_grad;
}

void Graph::note_branch(std::uint64_t h)
{
    branch_sig_ = (branch_sig_ ^ h) * 0x100000001b3ull;
}

Gradients Graph::backward(Var loss, KeepGrads keep)
{
    check_var(loss);
    if (value(loss).size() != 1)
        throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                    shape_str(value(loss).shape()));
    if (!nodes_[loss.id].requires_grad)
        throw std::invalid_argument("backward: loss is detached from every parameter");

    std::vector<std::vector<double>> grads(nodes_.size());
    grads[loss.id].assign(1, 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        auto& node = nodes_[i];
        if (grads[i].empty() || !node.backward) continue;
        BackwardContext ctx(*this, i, node.inputs, grads);
        node.backward(grads[i], ctx);
        if (keep == KeepGrads::parameters_only && !node.is_param && i != loss.id)
            std::vector<double>().swap(grads[i]);
    }

    Gradients out;
    out.graph_uid_ = uid_;
    out.param_nodes_ = params_;
    for (auto& [tensor, id] : params_)
        if (grads[id].empty()) grads[id].assign(tensor->size(), 0.0);
    for (std::size_t i = 0; i < grads.size(); ++i)
        if (!grads[i].empty()) out.by_node_.emplace(i, std::move(grads[i]));
    return out;
}

Var elementwise(ElementwiseOp op, Var a, Var b)
{
    const auto& x = a.value();
    const auto& y = b.value();
    require_same_shape("elementwise", x, y);
    std::vector<double> out(x.size());
    switch (op) {
    case ElementwiseOp::add:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
        return a.graph->record("add", Tensor(x.shape(), std::move(out)), {a, b},
                               [](std::span<const double> go, BackwardContext& ctx) {
                                   for (std::size_t s = 0; s < 2; ++s) {
                                       if (!ctx.wants(s)) continue;
                                       auto g = ctx.grad(s);
                                       for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
                                   }
                               });
    case ElementwiseOp::sub:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
        return a.graph->record("sub", Tensor(x.shape(), std::move(out)), {a, b},
                               [](std::span<const double> go, BackwardContext& ctx) {
                                   if (ctx.wants(0)) {
                                       auto g = ctx.grad(0);
                                       for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
                                   }
                                   if (ctx.wants(1)) {
                                       auto g = ctx.grad(1);
                                       for (std::size_t i = 0; i < go.size(); ++i) g[i] -= go[i];
                                   }
                               });
    case ElementwiseOp::mul:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
        return a.graph->record("mul", Tensor(x.shape(), std::move(out)), {a, b},
                               [](std::span<const double> go, BackwardContext& ctx) {
                                   for (std::size_t s = 0; s < 2; ++s) {
                                       if (!ctx.wants(s)) continue;
                                       const auto& other = ctx.input(1 - s);
                                       auto g = ctx.grad(s);
                                       for (std::size_t i = 0; i < go.size(); ++i)
                                           g[i] += go[i] * other[i];
                                   }
                               });
    }
    throw std::invalid_argument("elementwise: unknown op");
}

Var add(Var a, Var b) { return elementwise(ElementwiseOp::add, a, b); }
Var sub(Var a, Var b) { return elementwise(ElementwiseOp::sub, a, b); }
Var mul(Var a, Var b) { return elementwise(ElementwiseOp::mul, a, b); }

Var scale(Var a, double factor)
{
    const auto& x = a.value();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
    return a.graph->record("scale", Tensor(x.shape(), std::move(out)), {a},
                           [factor](std::span<const double> go, BackwardContext& ctx) {
                               auto g = ctx.grad(0);
                               for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * factor;
                           });
}

Var matmul(Var a, Var b)
{
    const auto& x = a.value();
    const auto& y = b.value();
    if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(x.shape()) + " x " +
                                    shape_str(y.shape()));
    const auto m = x.dim(0), k = x.dim(1), n = y.dim(1);
    Tensor out = Tensor::zeros({m, n});
    MutMap(out.data().data(), m, n).noalias() =
        ConstMap(x.data().data(), m, k) * ConstMap(y.data().data(), k, n);
    return a.graph->record(
        "matmul", std::move(out), {a, b},
        [m, k, n](std::span<const double> go, BackwardContext& ctx) {
            ConstMap dc(go.data(), m, n);
            if (ctx.wants(0)) {
                MutMap(ctx.grad(0).data(), m, k).noalias() +=
                    dc * ConstMap(ctx.input(1).data().data(), k, n).transpose();
            }
            if (ctx.wants(1)) {
                MutMap(ctx.grad(1).data(), k, n).noalias() +=
                    ConstMap(ctx.input(0).data().data(), m, k).transpose() * dc;
            }
        });
}

Var sum(Var a)
{
    const auto& x = a.value();
    double total = std::accumulate(x.data().begin(), x.data().end(), 0.0);
    return a.graph->record("sum", Tensor({1}, {total}), {a},
                           [](std::span<const double> go, BackwardContext& ctx) {
                               for (auto& g : ctx.grad(0)) g += go[0];
                           });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var reshape(Var a, Shape shape)
{
    return a.graph->record("reshape", a.value().reshaped(std::move(shape)), {a},
                           [](std::span<const double> go, BackwardContext& ctx) {
                               auto g = ctx.grad(0);
                               for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
                           });
}

Var tile_rows(Var v, std::size_t rows)
{
    const auto& x = v.value();
    if (x.rank() != 1) throw std::invalid_argument("tile_rows: expected a vector, got " + shape_str(x.shape()));
    if (rows == 0) throw std::invalid_argument("tile_rows: zero rows");
    const auto d = x.size();
    std::vector<double> out(rows * d);
    for (std::size_t r = 0; r < rows; ++r) std::copy(x.data().begin(), x.data().end(), out.begin() + r * d);
    return v.graph->record("tile_rows", Tensor({rows, d}, std::move(out)), {v},
                           [rows, d](std::span<const double> go, BackwardContext& ctx) {
                               auto g = ctx.grad(0);
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t j = 0; j < d; ++j) g[j] += go[r * d + j];
                           });
}

Var concat_cols(Var a, Var b)
{
    const auto& x = a.value();
    const auto& y = b.value();
    if (x.rank() != 2 || y.rank() != 2 || x.dim(0) != y.dim(0))
        throw std::invalid_argument("concat_cols: incompatible shapes " + shape_str(x.shape()) +
                                    " and " + shape_str(y.shape()));
    const auto n = x.dim(0), p = x.dim(1), q = y.dim(1);
    std::vector<double> out(n * (p + q));
    for (std::size_t r = 0; r < n; ++r) {
        std::copy_n(x.data().begin() + r * p, p, out.begin() + r * (p + q));
        std::copy_n(y.data().begin() + r * q, q, out.begin() + r * (p + q) + p);
    }
    return a.graph->record("concat_cols", Tensor({n, p + q}, std::move(out)), {a, b},
                           [n, p, q](std::span<const double> go, BackwardContext& ctx) {
                               if (ctx.wants(0)) {
                                   auto g = ctx.grad(0);
                                   for (std::size_t r = 0; r < n; ++r)
                                       for (std::size_t j = 0; j < p; ++j) g[r * p + j] += go[r * (p + q) + j];
                               }
                               if (ctx.wants(1)) {
                                   auto g = ctx.grad(1);
                                   for (std::size_t r = 0; r < n; ++r)
                                       for (std::size_t j = 0; j < q; ++j)
                                           g[r * q + j] += go[r * (p + q) + p + j];
                               }
                           });
}

Var select_rows(Var a, std::span<const std::size_t> rows)
{
    const auto& x = a.value();
    if (x.rank() != 2) throw std::invalid_argument("select_rows: expected rank 2, got " + shape_str(x.shape()));
    if (rows.empty()) throw std::invalid_argument("select_rows: no rows selected");
    const auto d = x.dim(1);
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    std::vector<double> out(idx.size() * d);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= x.dim(0)) throw std::out_of_range("select_rows: row index out of range");
        std::copy_n(x.data().begin() + idx[r] * d, d, out.begin() + r * d);
    }
    Tensor value({idx.size(), d}, std::move(out));
    return a.graph->record("select_rows", std::move(value), {a},
                           [idx = std::move(idx), d](std::span<const double> go, BackwardContext& ctx) {
                               auto g = ctx.grad(0);
                               for (std::size_t r = 0; r < idx.size(); ++r)
                                   for (std::size_t j = 0; j < d; ++j) g[idx[r] * d + j] += go[r * d + j];
                           });
}

void sgd_step(std::span<Tensor* const> params, const Gradients& grads, double lr)
{
    if (!(lr >= 0.0) || !std::isfinite(lr))
        throw std::invalid_argument("sgd_step: learning rate must be finite and non-negative");
    for (auto* p : params) {
        auto* g = grads.find(*p);
        if (!g) throw std::invalid_argument("sgd_step: missing gradient for parameter " + shape_str(p->shape()));
        if (g->size() != p->size()) throw std::invalid_argument("sgd_step: gradient size mismatch");
        auto d = p->data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= lr * (*g)[i];
    }
}

FdCheckResult finite_difference_check(const LossFn& loss, std::span<Tensor* const> params,
                                      double eps, FdCheckOptions opts)
{
    if (!(eps > 0.0 && eps <= 1e-2)) throw std::invalid_argument("finite_difference_check: eps must be in (0, 1e-2]");

    auto evaluate = [&](bool grads) {
        Graph g(grads ? GradMode::enabled : GradMode::disabled);
        g.set_branch_tracking(true);
        Var out = loss(g);
        const auto& v = out.value();
        if (v.size() != 1 || !std::isfinite(v[0]))
            throw std::runtime_error("finite_difference_check: loss is not a finite scalar");
        return std::make_pair(v[0], g.branch_signature());
    };

    Graph g;
    g.set_branch_tracking(true);
    Var out = loss(g);
    if (out.value().size() != 1 || !std::isfinite(out.value()[0]))
        throw std::runtime_error("finite_difference_check: loss is not a finite scalar");
    const auto base_sig = g.branch_signature();
    Gradients grads = g.backward(out);

    FdCheckResult result;
    std::mt19937_64 rng(opts.seed);
    for (auto* p : params) {
        auto analytic = grads.of(*p);
        std::vector<std::size_t> coords(p->size());
        std::iota(coords.begin(), coords.end(), 0);
        if (coords.size() > opts.max_coords_per_param) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(opts.max_coords_per_param);
        }
        auto data = p->data();
        for (auto i : coords) {
            const double saved = data[i];
            data[i] = saved + eps;
            auto [fp, sp] = evaluate(false);
            data[i] = saved - eps;
            auto [fm, sm] = evaluate(false);
            data[i] = saved;
            if (sp != base_sig || sm != base_sig) {
                ++result.skipped;
                continue;
            }
            const double numeric = (fp - fm) / (2.0 * eps);
            const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
            result.max_rel_error = std::max(result.max_rel_error, err);
            ++result.checked;
        }
    }
    return result;
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h)
{
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace vtm
