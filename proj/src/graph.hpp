#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <vector>

#include "tensor.hpp"

namespace motlab::nn {

/// Handle into a Graph; cheap to copy, valid for the graph's lifetime.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Additive attention masks for a stacked batch: one (n x n) matrix per
/// sequence, entries 0 (attend) or -1e30 (blocked).
struct BatchAdditiveMasks {
    std::vector<Tensor> masks;
    std::int64_t seq_len = 0;
};

constexpr double kMaskNegInf = -1e30;
constexpr double kNormEps = 1e-8;

/// Reverse-mode tape. Ops append nodes; backward() walks the tape in reverse
/// creation order. Construct with grads_enabled=false for inference forwards
/// (no closures are recorded).
class Graph {
public:
    explicit Graph(bool grads_enabled = true) : grads_enabled_(grads_enabled) {}

    Var leaf(Tensor value, bool requires_grad = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }
    Var scalar(double v, Dtype dt = Dtype::f64);

    const Tensor& value(Var v) const;
    /// Gradient of the last backward() target w.r.t. v; zeros if v was never
    /// reached.
    Tensor grad(Var v) const;
    bool requires_grad(Var v) const;
    bool grads_enabled() const { return grads_enabled_; }
    std::size_t size() const { return nodes_.size(); }

    /// Seeds d(loss)/d(loss)=1 and accumulates into every reachable leaf.
    /// loss must be a scalar (shape [1]) and finite.
    void backward(Var loss);

    // --- ops -----------------------------------------------------------

    Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var mul_const(Var a, Tensor c);
    Var add_const(Var a, Tensor c);
    /// Adds a length-d vector to every row of an (n x d) input.
    Var add_rowvec(Var a, Var v);
    /// Scales row i of a by entry i of the length-n vector c.
    Var mul_colvec(Var a, Var c);
    Var scale(Var a, double s);
    Var silu(Var a);
    Var exp(Var a);
    /// Softmax over the last axis. add_mask (same shape, entries 0/-1e30) is
    /// applied first when given; rows whose entries are all blocked yield an
    /// all-zero row instead of NaN.
    Var softmax_masked(Var logits, const Tensor* add_mask = nullptr);
    Var rmsnorm(Var x, Var gain);
    Var layernorm(Var x, Var gain);
    Var gather_rows(Var x, std::vector<std::int64_t> idx);
    /// Places row i of x at row idx[i] of an (n_rows x d) zero tensor.
    /// Indices must be distinct.
    Var scatter_rows(Var x, std::vector<std::int64_t> idx, std::int64_t n_rows);
    Var slice_cols(Var x, std::int64_t begin, std::int64_t end);
    Var concat_cols(const std::vector<Var>& parts);
    Var transpose(Var x);
    Var sum_all(Var x);
    Var mean_all(Var x);
    /// Per-row negative log-likelihood of targets under softmax(logits).
    /// Rows with target < 0 contribute 0.
    Var cross_entropy_logits(Var logits, std::vector<std::int64_t> targets);
    /// Mean squared error against a constant target, averaged over all
    /// coordinates.
    Var mse_vs(Var pred, Tensor target);
    /// Fused multi-head scaled-dot-product attention over a stacked batch of
    /// equal-length sequences. q,k,v: (B*n) x D with D divisible by n_heads.
    /// The masks are shared so they stay alive through backward.
    Var attention(Var q, Var k, Var v, std::shared_ptr<const BatchAdditiveMasks> masks,
                  int n_heads);

private:
    struct Node {
        Tensor value;
        Tensor grad;  // allocated on first accumulation
        bool requires_grad = false;
        std::function<void()> backward_fn;
    };

    Node& node(Var v);
    const Node& node(Var v) const;
    Tensor& grad_buf(int id);
    void accumulate(int id, const Tensor& g);
    void accumulate_move(int id, Tensor&& g);
    bool want_grad(std::initializer_list<Var> parents) const;
    Var push(Tensor value, bool requires_grad, std::function<void()> backward_fn);

    std::deque<Node> nodes_;
    bool grads_enabled_;
};

}  // namespace motlab::nn
