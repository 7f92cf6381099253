#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "exdrop/matrix.hpp"

namespace exdrop {

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;  // same shape as value, zero until backward()
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backprop;
  const char* op_tag = "leaf";
};

}  // namespace detail

// Handle to a node in a reverse-mode autodiff graph over whole matrices.
// Copying a Var shares the node. Graphs are built per forward pass and
// discarded after the optimizer step.
class Var {
public:
  Var() = default;
  explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  const char* op_tag() const { return node_->op_tag; }
  bool empty() const { return node_ == nullptr; }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& shared() const { return node_; }

private:
  std::shared_ptr<detail::Node> node_;
};

// Graph input. Parameters and constants alike; the caller decides whose
// grads to read after backward().
Var leaf(Matrix value);

// Populates grad = d(loss)/d(value) for every node reachable from loss.
// loss must be 1x1. Grads of reachable nodes are overwritten, not
// accumulated across calls.
void backward(const Var& loss);

// Central-difference gradient of a scalar function, the oracle the
// analytic gradients are checked against.
Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f,
                        const Matrix& x, double h);

// Differentiable mirrors of the Matrix kernels.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var hadamard(const Var& a, const Var& b);
Var relu(const Var& a);
Var row_softmax(const Var& s);
Var row_normalize(const Var& x);
Var layer_norm(const Var& x, const Var& gain, const Var& bias);
Var diag_part(const Var& a);
Var trace(const Var& a);                         // 1x1
Var trace_product(const Var& a, const Var& b);   // 1x1, tr(a*b)
Var frobenius_sq(const Var& a);                  // 1x1

// y_ij = x_ij + b_0j for a 1 x cols row vector b.
Var add_rowvec(const Var& x, const Var& b);

Var vstack(const Var& top, const Var& bottom);
Var hstack(const Var& left, const Var& right);
Var take_row(const Var& a, std::size_t r);
Var take_rows(const Var& a, std::size_t r0, std::size_t r1);
Var take_cols(const Var& a, std::size_t c0, std::size_t c1);

// Elementwise sum of same-shaped terms as a single n-ary node.
Var sum(const std::vector<Var>& terms);
// Stacks 1-row values into one (n x cols) matrix.
Var concat_rows(const std::vector<Var>& rows);

// Mean over rows of log-sum-exp(z_i) - z_i[label_i]; 1x1 output.
Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels);

// Scalar passthroughs so templated code can mix Matrix-valued scalars
// (plain double) and Var-valued scalars under the same names.
inline double scale(double a, double s) { return a * s; }
inline double add(double a, double b) { return a + b; }

}  // namespace exdrop
