#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "disents/random.hpp"
#include "disents/tensor.hpp"

namespace disents {

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& self)>;

// One executed operation (or a leaf). `seq` orders nodes by creation so the
// backward pass can replay adjoints in reverse execution order.
struct Node {
  Tensor value;
  Tensor grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  void accumulate(const Tensor& g);
  Tensor& grad_buffer();
};

}  // namespace detail

/// Handle to a value that may take part in reverse-mode differentiation.
///
/// Copies share the underlying node, so a parameter Var held by a model and
/// the same Var used inside a forward pass see the same gradient slot.
/// Operations on Vars record their adjoints only when at least one input
/// requires a gradient; otherwise the result is a plain constant.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  static Var parameter(Tensor value) { return Var(std::move(value), true); }
  static Var constant(Tensor value) { return Var(std::move(value), false); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  /// Direct write access for optimizers and checkpoint loading.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// Accumulated gradient; zeros of the value's shape if nothing reached it.
  Tensor grad() const;
  void zero_grad() const;

  double item() const { return node_->value.item(); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Result of an operation: records `fn` only if some input needs a gradient.
  static Var from_op(Tensor value, std::vector<Var> inputs, detail::BackwardFn fn);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Runs the recorded adjoints from `loss` (which must hold a single value).
/// Gradients accumulate into every reachable Var that requires one.
void backward(const Var& loss);

struct NamedParam {
  std::string name;
  Var var;
};
using ParamSet = std::vector<NamedParam>;

void zero_grads(const ParamSet& params);

namespace ops {

// Elementwise binary operations broadcast numpy-style (shapes right-aligned,
// size-1 dimensions stretch).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var neg(const Var& x);
Var scale(const Var& x, double factor);
Var add_scalar(const Var& x, double c);
Var exp(const Var& x);
Var log(const Var& x);
Var sqrt(const Var& x);
Var square(const Var& x);
Var relu(const Var& x);
/// Exact (erf) form.
Var gelu(const Var& x);

/// [m, n] x [n, p] -> [m, p].
Var matmul(const Var& a, const Var& b);
/// Rank-2 transpose.
Var transpose(const Var& x);
Var reshape(const Var& x, Shape shape);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(const Var& x, std::size_t axis, std::size_t start, std::size_t length);
/// Rows of a rank-2 tensor in the order given; repeated indices allowed.
Var gather_rows(const Var& x, std::span<const std::size_t> rows);

Var sum(const Var& x);
Var mean(const Var& x);
// Reductions over the last axis keep it as size 1.
Var sum_lastdim(const Var& x);
Var mean_lastdim(const Var& x);
/// Population variance over the last axis.
Var var_lastdim(const Var& x);

Var softmax_lastdim(const Var& x);
Var log_softmax_lastdim(const Var& x);
Var layer_norm_lastdim(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

/// Inverted dropout. Identity when `training` is false or rate is 0; the
/// mask is drawn from `rng` otherwise.
Var dropout(const Var& x, double rate, bool training, Rng* rng);

}  // namespace ops

}  // namespace disents
