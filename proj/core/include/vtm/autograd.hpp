#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vtm/tensor.hpp"

namespace vtm {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
struct Var {
    Graph* graph = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

/// Gradients produced by Graph::backward, keyed by node id.
class Gradients {
public:
    /// Gradient for a tensor registered with Graph::parameter. Parameters that
    /// the loss does not depend on get an all-zero gradient.
    std::span<const double> of(const Tensor& param) const;
    std::span<const double> of(Var v) const;
    const std::vector<double>* find(const Tensor& param) const;
    const std::vector<double>* find(std::size_t node_id) const;

private:
    friend class Graph;
    std::uint64_t graph_uid_ = 0;
    std::unordered_map<std::size_t, std::vector<double>> by_node_;
    std::unordered_map<const Tensor*, std::size_t> param_nodes_;
};

/// View handed to an op's backward function.
class BackwardContext {
public:
    std::size_t input_count() const { return inputs_.size(); }
    const Tensor& input(std::size_t slot) const;
    const Tensor& output() const;
    bool wants(std::size_t slot) const;
    /// Accumulation buffer for the gradient of input `slot`.
    std::span<double> grad(std::size_t slot);

private:
    friend class Graph;
    BackwardContext(Graph& g, std::size_t node, const std::vector<std::size_t>& inputs,
                    std::vector<std::vector<double>>& grads)
        : graph_(g), node_(node), inputs_(inputs), grads_(grads) {}

    Graph& graph_;
    std::size_t node_;
    const std::vector<std::size_t>& inputs_;
    std::vector<std::vector<double>>& grads_;
};

using BackwardFn = std::function<void(std::span<const double> grad_out, BackwardContext& ctx)>;

enum class GradMode { enabled, disabled };
enum class KeepGrads { all, parameters_only };

/// Define-by-run computation record. Nodes are appended in execution order,
/// so the record is topologically sorted by construction. A graph and every
/// Var pointing into it belong to a single thread.
class Graph {
public:
    explicit Graph(GradMode mode = GradMode::enabled);
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value);
    /// Registers a tensor whose gradient is wanted. The tensor is borrowed and
    /// must outlive the graph; registering the same tensor twice returns the
    /// same node.
    Var parameter(const Tensor& param);

    /// Appends an op node. `backward` is dropped when no input needs a gradient.
    Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
               BackwardFn backward);

    const Tensor& value(Var v) const;
    std::string_view op(Var v) const;
    bool requires_grad(Var v) const;
    bool grad_enabled() const { return mode_ == GradMode::enabled; }
    std::size_t size() const { return nodes_.size(); }
    std::uint64_t uid() const { return uid_; }

    /// Reverse sweep from a scalar loss; each node is visited once.
    Gradients backward(Var loss, KeepGrads keep = KeepGrads::all);

    /// Piecewise ops (ReLU masks, pooling argmax) fold their branch decisions
    /// in here when tracking is on, so callers can tell whether two
    /// evaluations took the same linear piece.
    void set_branch_tracking(bool on) { track_branches_ = on; }
    bool branch_tracking() const { return track_branches_; }
    void note_branch(std::uint64_t h);
    std::uint64_t branch_signature() const { return branch_sig_; }

private:
    friend class BackwardContext;

    struct Node {
        std::string_view op;
        Tensor owned;
        const Tensor* borrowed = nullptr;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        bool is_param = false;

        const Tensor& value() const { return borrowed ? *borrowed : owned; }
    };

    void check_var(Var v) const;

    GradMode mode_;
    std::uint64_t uid_;
    std::deque<Node> nodes_;
    std::unordered_map<const Tensor*, std::size_t> params_;
    bool track_branches_ = false;
    std::uint64_t branch_sig_ = 0xcbf29ce484222325ull;
};

enum class ElementwiseOp { add, sub, mul };

Var elementwise(ElementwiseOp op, Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// [m,k] x [k,n] -> [m,n]
Var matmul(Var a, Var b);
/// Sum of all elements, shape [1].
Var sum(Var a);
Var mean(Var a);
Var reshape(Var a, Shape shape);
/// [d] -> [rows, d], each row a copy of the vector.
Var tile_rows(Var v, std::size_t rows);
/// [n,p] ++ [n,q] -> [n,p+q]
Var concat_cols(Var a, Var b);
/// Gathers rows of a rank-2 tensor; repeated indices accumulate gradient.
Var select_rows(Var a, std::span<const std::size_t> rows);

/// p <- p - lr * g for every parameter. Throws if a parameter has no entry.
void sgd_step(std::span<Tensor* const> params, const Gradients& grads, double lr);

struct FdCheckOptions {
    /// Coordinates sampled per parameter tensor; tensors at most this large
    /// are checked exhaustively.
    std::size_t max_coords_per_param = 32;
    std::uint64_t seed = 0;
};

struct FdCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    /// Coordinates whose +-eps evaluations crossed a ReLU/pooling boundary,
    /// where a central difference does not estimate the derivative.
    std::size_t skipped = 0;
};

using LossFn = std::function<Var(Graph&)>;

/// Compares reverse-mode gradients of `loss` against central differences,
/// returning max |analytic - numeric| / max(1, |analytic|) over the sampled
/// coordinates. `loss` must register every tensor in `params` via
/// Graph::parameter.
FdCheckResult finite_difference_check(const LossFn& loss, std::span<Tensor* const> params,
                                      double eps, FdCheckOptions opts = {});

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes,
                    std::uint64_t h = 0xcbf29ce484222325ull);

}  // namespace vtm
