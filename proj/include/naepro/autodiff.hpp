// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode differentiation over dense tensors. Every op
// builds a node holding its value, its parents and a closure that pushes the
// node's adjoint back into the parents. The graph is rebuilt on every forward
// pass and dies with the last Var referencing it.
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "naepro/tensor.hpp"

namespace naepro::ad {

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily on the first accumulation
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  bool requires_grad = false;
  bool is_leaf = true;

  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }

  /// Accumulated adjoint; an all-zero tensor when nothing reached this node.
  const Tensor& grad() const;
  void zero_grad();

  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& handle() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var parameter(Tensor value);
Var constant(Tensor value);

bool grad_enabled() noexcept;

// While alive, ops record no parents or closures so intermediates are freed as
// soon as their Var goes out of scope.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Seeds d(root)/d(root) = 1 and propagates. Leaf adjoints accumulate across
/// calls; interior adjoints are reset on every call.
void backward(const Var& root);

// ---- linear algebra --------------------------------------------------------
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

// ---- elementwise (numpy broadcasting) ----------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var silu(const Var& a);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var clamp_min(const Var& a, double floor);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }

// ---- normalisation -------------------------------------------------------------
Var softmax(const Var& a, std::size_t axis);
Var log_softmax(const Var& a);  // last axis

inline constexpr double kLayerNormEps = 1e-5;
Var layernorm(const Var& x, const Var& gain, const Var& bias);

// ---- reductions --------------------------------------------------------------
Var sum(const Var& a);
Var mean(const Var& a);
Var sum_last(const Var& a);                      // [.., n] -> [.., 1]
Var group_sum(const Var& a, std::size_t group);  // rows grouped consecutively
Var row_norm(const Var& a);                      // [.., n] -> [.., 1], zero-guarded
Var norm2(const Var& a);                         // whole tensor -> scalar

// ---- indexing ------------------------------------------------------------------
Var reshape(const Var& a, Shape shape);
Var gather_rows(const Var& a, std::span<const std::size_t> rows);
Var take(const Var& a, std::span<const std::size_t> rows, std::span<const std::size_t> cols);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);

/// Affine map of per-edge concatenations without materialising them:
///   out[e] = [a[src[e]], a[dst[e]], extra[e]] · weight + bias
/// With an empty src the a[src] block is dropped from the concatenation.
Var pair_linear(const Var& a, const Var& extra, std::span<const std::size_t> src,
                std::span<const std::size_t> dst, const Var& weight, const Var& bias);

}  // namespace naepro::ad
