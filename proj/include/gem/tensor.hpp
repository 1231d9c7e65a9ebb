#pragma once

// Dense f64 tensors with reverse-mode differentiation.
//
// Every op that sees an input with requires_grad records a node holding its
// parents and a local backward rule. backward(loss) walks the recorded graph
// in reverse topological order, accumulates into leaf gradients, and then
// releases the graph.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gem/rng.hpp"

namespace gem::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::vector<double>& ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const double> values() const { return node_->value; }
    std::span<double> mutable_values() { return node_->value; }
    double at(std::size_t flat) const { return node_->value[flat]; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    // Gradient view; zero-filled storage is allocated on demand.
    std::span<const double> grad() const;
    void zero_grad() { node_->grad.clear(); }

    // Deep value copy detached from any graph.
    Tensor detach(bool requires_grad = false) const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

struct Parameter {
    std::string name;
    Tensor tensor;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};
bool grad_enabled();

// Elementwise and reductions.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_bias(const Tensor& x, const Tensor& bias);  // bias broadcast over the last axis
Tensor sum(const Tensor& a);
Tensor gelu(const Tensor& x);

// Linear algebra. matmul contracts the last axis of x with the first of w (2-D).
Tensor matmul(const Tensor& x, const Tensor& w);
Tensor transpose(const Tensor& w);
// [G,n,k] x [G,k,m] -> [G,n,m]; with transpose_b the second operand is [G,m,k].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b);

// Normalisation and probabilities.
Tensor softmax(const Tensor& x, std::size_t axis);
// Row softmax of x [G,n,m]. key_mask is [B,m] (1 = real key) with G = B * group;
// masked keys receive exactly zero weight.
Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> key_mask, std::size_t group);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor dropout(const Tensor& x, double p, Rng& rng, bool training);

// Indexing and layout.
Tensor embedding(const Tensor& table, std::span<const int> ids, Shape leading);
Tensor select_position(const Tensor& x, std::size_t pos);  // [B,T,d] -> [B,d]
Tensor concat_last(const Tensor& a, const Tensor& b);      // [N,p],[N,q] -> [N,p+q]
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);  // [N,d] -> [M,d]
Tensor reshape(const Tensor& x, Shape shape);
Tensor split_heads(const Tensor& x, std::size_t heads);  // [B,T,d] -> [B*H,T,d/H]
Tensor merge_heads(const Tensor& x, std::size_t heads);  // [B*H,T,dh] -> [B,T,H*dh]

// Mean over rows of -log softmax(logits)[target].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

// Populates gradients of every reachable leaf; the graph is released afterwards.
void backward(const Tensor& loss);

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;  // sorted by max_rel_error, descending
    double max_rel_error() const { return entries.empty() ? 0.0 : entries.front().max_rel_error; }
};

// Central differences against analytic gradients. The relative error of each
// coordinate is |a - n| / max(1, |a|, |n|). fn must be deterministic: it is
// evaluated twice up front and the check refuses to run if the values differ.
GradCheckReport finite_diff_check(const std::function<Tensor()>& fn,
                                  std::span<Parameter> params, double h = 1e-5);

}  // namespace gem::nn
