// Dense-tensor engine with reverse-mode differentiation. Just enough ops for
// an encoder-decoder transformer with bottleneck adapters; no broadcasting,
// shapes must match exactly.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mae/common.hpp"

namespace mae::ad {

using mae::Real;
using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
    Shape shape;
    std::vector<Real> val;
    std::vector<Real> grad;  // allocated during backward for active nodes
    bool requires_grad = false;  // trainable leaf
    bool grad_path = false;      // gradients flow through this node
    bool backward_done = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    bool active() const { return !grad.empty(); }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, Real value);
    static Tensor from(Shape shape, std::vector<Real> values);
    static Tensor scalar(Real value);
    // Trainable leaf.
    static Tensor param(Shape shape, std::vector<Real> values);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t numel() const { return static_cast<int64_t>(node_->val.size()); }
    int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(node_->shape.size()); }

    std::vector<Real>& values() { return node_->val; }
    const std::vector<Real>& values() const { return node_->val; }
    const std::vector<Real>& grad() const;
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    bool requires_grad() const { return node_->requires_grad; }
    Real item() const;

    void zero_grad();
    // Leaf tensors only; flips whether gradients accumulate here.
    void set_requires_grad(bool value);

    std::shared_ptr<Node>& node() { return node_; }
    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Graph recording switch (thread-local). With recording off every op result
// is a constant leaf.
bool grad_enabled();
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// ---- forward primitives ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, Real factor);
// Adds `bias` (length = last dim) to every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// Multiplies each row (over the last dim) by a constant factor.
Tensor scale_rows(const Tensor& x, const std::vector<Real>& factors);

// [m,k]x[k,n], [b,m,k]x[b,k,n], or [b,m,k]x[k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);

Tensor softmax(const Tensor& x);  // last dim
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps = 1e-6);
Tensor gelu(const Tensor& x);  // exact: x * Phi(x)
Tensor relu(const Tensor& x);

// Gathers rows of `table` ([vocab, d]); output shape = leading + [d].
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids, Shape leading);

// Inverted dropout with a counter-based mask keyed by `key`; identity when
// train is false or p == 0.
Tensor dropout(const Tensor& x, Real p, bool train, uint64_t key);

Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len);

// [B,S,H*dh] -> [B*H,S,dh] and back.
Tensor split_heads(const Tensor& x, int64_t n_heads);
Tensor merge_heads(const Tensor& x, int64_t n_heads);

Tensor reshape(const Tensor& x, Shape new_shape);

Tensor sum(const Tensor& x);  // scalar

// Mean over rows with weight > 0 of the label-smoothed cross-entropy (nats).
// logits: [N,V]; targets: N ids; weights: N (0 masks a position out).
Tensor cross_entropy_label_smoothing(const Tensor& logits, const std::vector<int>& targets,
                                     const std::vector<Real>& weights, Real smoothing);

// Mean over weighted rows of -sum_j teacher_probs[i,j] * log softmax(s)[i,j].
// The teacher distribution is a constant.
Tensor soft_cross_entropy(const Tensor& student_logits, const std::vector<Real>& teacher_probs,
                          const std::vector<Real>& weights);

// Reverse-mode sweep from a scalar loss; errors on a second call for the
// same loss without zeroing.
void backward(const Tensor& loss);

Real gelu_scalar(Real x);

}  // namespace mae::ad
