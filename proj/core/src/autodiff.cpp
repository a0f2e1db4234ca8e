#include "disents/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <unordered_set>
#include <utility>

#include "disents/error.hpp"

namespace disents {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::atomic<std::uint64_t> g_next_seq{1};

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.dim(0)),
                  static_cast<Eigen::Index>(t.dim(1)));
}

MutMap as_matrix(Tensor& t) {
  return MutMap(t.data().data(), static_cast<Eigen::Index>(t.dim(0)),
                static_cast<Eigen::Index>(t.dim(1)));
}

// Output shape plus, for every output element, the flat offsets into each
// operand. Same-shape operands skip the offset tables.
struct BroadcastPlan {
  Shape out;
  bool same = false;
  std::vector<std::size_t> ia;
  std::vector<std::size_t> ib;

  std::size_t a_index(std::size_t i) const { return same ? i : ia[i]; }
  std::size_t b_index(std::size_t i) const { return same ? i : ib[i]; }
};

BroadcastPlan make_plan(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out = a;
    plan.same = true;
    return plan;
  }
  const std::size_t r = std::max(a.size(), b.size());
  Shape pa(r, 1), pb(r, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(r - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(r - b.size()));
  plan.out.resize(r);
  for (std::size_t d = 0; d < r; ++d) {
    if (pa[d] == pb[d] || pb[d] == 1) {
      plan.out[d] = pa[d];
    } else if (pa[d] == 1) {
      plan.out[d] = pb[d];
    } else {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
  }
  std::vector<std::size_t> sa(r, 0), sb(r, 0);
  std::size_t acc_a = 1, acc_b = 1;
  for (std::size_t d = r; d-- > 0;) {
    sa[d] = pa[d] == 1 ? 0 : acc_a;
    sb[d] = pb[d] == 1 ? 0 : acc_b;
    acc_a *= pa[d];
    acc_b *= pb[d];
  }
  const std::size_t n = shape_size(plan.out);
  plan.ia.resize(n);
  plan.ib.resize(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t i = 0; i < n; ++i) {
    plan.ia[i] = oa;
    plan.ib[i] = ob;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < plan.out[d]) break;
      oa -= sa[d] * idx[d];
      ob -= sb[d] * idx[d];
      idx[d] = 0;
    }
  }
  return plan;
}

template <class Fwd, class Dfn>
Var unary(const Var& x, Fwd f, Dfn df) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return Var::from_op(std::move(out), {x}, [df](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p.value[i], self.value[i]);
  });
}

// Splits a shape around `axis` into (outer, axis length, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, length = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t d = 0; d < axis; ++d) r.outer *= s[d];
  r.length = s[axis];
  for (std::size_t d = axis + 1; d < s.size(); ++d) r.inner *= s[d];
  return r;
}

std::size_t last_dim(const Var& x, const char* op) {
  if (x.value().rank() == 0) throw ShapeError(std::string(op) + ": expected rank >= 1");
  return x.shape().back();
}

}  // namespace

namespace detail {

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.shape());
  if (grad.shape() != value.shape()) grad = Tensor(value.shape());
  return grad;
}

void Node::accumulate(const Tensor& g) {
  if (g.shape() != value.shape()) {
    throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match value shape " +
                     shape_str(value.shape()));
  }
  Tensor& buf = grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

}  // namespace detail

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
}

Tensor Var::grad() const {
  if (node_->grad.empty() || node_->grad.shape() != node_->value.shape()) {
    return Tensor(node_->value.shape());
  }
  return node_->grad;
}

void Var::zero_grad() const {
  if (node_) node_->grad = Tensor();
}

Var Var::from_op(Tensor value, std::vector<Var> inputs, detail::BackwardFn fn) {
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Var& v) { return v.requires_grad(); });
  Var out(std::move(value), needs);
  if (needs) {
    out.node_->parents.reserve(inputs.size());
    for (auto& in : inputs) out.node_->parents.push_back(in.node_);
    out.node_->backward = std::move(fn);
  }
  return out;
}

void backward(const Var& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined loss");
  if (loss.value().size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{loss.node().get()};
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && !seen.count(p.get())) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

  loss.node()->accumulate(Tensor::ones(loss.shape()));
  for (detail::Node* n : order) {
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

void zero_grads(const ParamSet& params) {
  for (const auto& p : params) p.var.zero_grad();
}

namespace ops {

Var add(const Var& a, const Var& b) {
  auto plan = make_plan(a.shape(), b.shape());
  Tensor out(plan.out);
  const Tensor &av = a.value(), &bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[plan.a_index(i)] + bv[plan.b_index(i)];
  return Var::from_op(std::move(out), {a, b}, [plan = std::move(plan)](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      Tensor& g = pa.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[plan.a_index(i)] += self.grad[i];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[plan.b_index(i)] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  auto plan = make_plan(a.shape(), b.shape());
  Tensor out(plan.out);
  const Tensor &av = a.value(), &bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[plan.a_index(i)] - bv[plan.b_index(i)];
  return Var::from_op(std::move(out), {a, b}, [plan = std::move(plan)](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      Tensor& g = pa.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[plan.a_index(i)] += self.grad[i];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[plan.b_index(i)] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  auto plan = make_plan(a.shape(), b.shape());
  Tensor out(plan.out);
  const Tensor &av = a.value(), &bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[plan.a_index(i)] * bv[plan.b_index(i)];
  return Var::from_op(std::move(out), {a, b}, [plan = std::move(plan)](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      Tensor& g = pa.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[plan.a_index(i)] += self.grad[i] * pb.value[plan.b_index(i)];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[plan.b_index(i)] += self.grad[i] * pa.value[plan.a_index(i)];
    }
  });
}

Var div(const Var& a, const Var& b) {
  auto plan = make_plan(a.shape(), b.shape());
  Tensor out(plan.out);
  const Tensor &av = a.value(), &bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[plan.a_index(i)] / bv[plan.b_index(i)];
  return Var::from_op(std::move(out), {a, b}, [plan = std::move(plan)](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      Tensor& g = pa.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[plan.a_index(i)] += self.grad[i] / pb.value[plan.b_index(i)];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double bvi = pb.value[plan.b_index(i)];
        g[plan.b_index(i)] -= self.grad[i] * pa.value[plan.a_index(i)] / (bvi * bvi);
      }
    }
  });
}

Var neg(const Var& x) { return scale(x, -1.0); }

Var scale(const Var& x, double factor) {
  return unary(
      x, [factor](double v) { return factor * v; },
      [factor](double, double) { return factor; });
}

Var add_scalar(const Var& x, double c) {
  return unary(
      x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var exp(const Var& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(const Var& x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var sqrt(const Var& x) {
  return unary(
      x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var square(const Var& x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var gelu(const Var& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v, double) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      });
}

Var matmul(const Var& a, const Var& b) {
  const Tensor &av = a.value(), &bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " +
                     shape_str(bv.shape()));
  }
  Tensor out = matmul_values(av, bv);
  return Var::from_op(std::move(out), {a, b}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto g = as_matrix(std::as_const(self.grad));
    if (pa.requires_grad) {
      auto ga = as_matrix(pa.grad_buffer());
      ga.noalias() += g * as_matrix(std::as_const(pb.value)).transpose();
    }
    if (pb.requires_grad) {
      auto gb = as_matrix(pb.grad_buffer());
      gb.noalias() += as_matrix(std::as_const(pa.value)).transpose() * g;
    }
  });
}

Var transpose(const Var& x) {
  Tensor out = transpose_values(x.value());
  return Var::from_op(std::move(out), {x}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.accumulate(transpose_values(self.grad));
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return Var::from_op(std::move(out), {x}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) {
      throw ShapeError("concat: " + shape_str(s) + " incompatible with " + shape_str(first) +
                       " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit os = split_at(out_shape, axis);
  Tensor out(out_shape);
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const std::size_t chunk = p.shape()[axis] * os.inner;
    const Tensor& v = p.value();
    for (std::size_t o = 0; o < os.outer; ++o) {
      std::copy_n(v.data().begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.data().begin() + static_cast<std::ptrdiff_t>(o * os.length * os.inner + offset));
    }
    offsets.push_back(offset);
    offset += chunk;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return Var::from_op(std::move(out), std::move(inputs),
                      [os, axis, offsets = std::move(offsets)](detail::Node& self) {
                        for (std::size_t k = 0; k < self.parents.size(); ++k) {
                          auto& p = *self.parents[k];
                          if (!p.requires_grad) continue;
                          const std::size_t chunk = p.value.shape()[axis] * os.inner;
                          Tensor& g = p.grad_buffer();
                          for (std::size_t o = 0; o < os.outer; ++o) {
                            const std::size_t src = o * os.length * os.inner + offsets[k];
                            for (std::size_t i = 0; i < chunk; ++i) g[o * chunk + i] += self.grad[src + i];
                          }
                        }
                      });
}

Var slice(const Var& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  if (axis >= s.size() || start + length > s[axis]) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range on axis " + std::to_string(axis) + " of " + shape_str(s));
  }
  const AxisSplit is = split_at(s, axis);
  Shape out_shape = s;
  out_shape[axis] = length;
  Tensor out(out_shape);
  const std::size_t chunk = length * is.inner;
  const Tensor& v = x.value();
  for (std::size_t o = 0; o < is.outer; ++o) {
    std::copy_n(v.data().begin() + static_cast<std::ptrdiff_t>((o * is.length + start) * is.inner),
                chunk, out.data().begin() + static_cast<std::ptrdiff_t>(o * chunk));
  }
  return Var::from_op(std::move(out), {x}, [is, start, chunk](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t o = 0; o < is.outer; ++o) {
      const std::size_t dst = (o * is.length + start) * is.inner;
      for (std::size_t i = 0; i < chunk; ++i) g[dst + i] += self.grad[o * chunk + i];
    }
  });
}

Var gather_rows(const Var& x, std::span<const std::size_t> rows) {
  const Tensor& v = x.value();
  if (v.rank() != 2) throw ShapeError("gather_rows: expected rank 2, got " + shape_str(v.shape()));
  const std::size_t n = v.dim(1);
  Tensor out({rows.size(), n});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= v.dim(0)) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[r]) + " out of range for " +
                       shape_str(v.shape()));
    }
    std::copy_n(v.data().begin() + static_cast<std::ptrdiff_t>(rows[r] * n), n,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  return Var::from_op(std::move(out), {x},
                      [idx = std::vector<std::size_t>(rows.begin(), rows.end()), n](detail::Node& self) {
                        auto& p = *self.parents[0];
                        if (!p.requires_grad) return;
                        Tensor& g = p.grad_buffer();
                        for (std::size_t r = 0; r < idx.size(); ++r)
                          for (std::size_t j = 0; j < n; ++j) g[idx[r] * n + j] += self.grad[r * n + j];
                      });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return Var::from_op(Tensor::scalar(s), {x}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    const double gs = self.grad[0];
    for (double& gi : g.data()) gi += gs;
  });
}

Var mean(const Var& x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw ContractError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var sum_lastdim(const Var& x) {
  const std::size_t n = last_dim(x, "sum_lastdim");
  const Tensor& v = x.value();
  Shape out_shape = v.shape();
  out_shape.back() = 1;
  Tensor out(out_shape);
  const std::size_t rows = out.size();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += v[r * n + j];
    out[r] = s;
  }
  return Var::from_op(std::move(out), {x}, [n](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t r = 0; r < self.grad.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += self.grad[r];
  });
}

Var mean_lastdim(const Var& x) {
  const std::size_t n = last_dim(x, "mean_lastdim");
  if (n == 0) throw ContractError("mean_lastdim over empty axis");
  return scale(sum_lastdim(x), 1.0 / static_cast<double>(n));
}

Var var_lastdim(const Var& x) {
  const std::size_t n = last_dim(x, "var_lastdim");
  if (n == 0) throw ContractError("var_lastdim over empty axis");
  const Tensor& v = x.value();
  Shape out_shape = v.shape();
  out_shape.back() = 1;
  Tensor out(out_shape);
  Tensor means(out_shape);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < out.size(); ++r) {
    double m = 0.0;
    for (std::size_t j = 0; j < n; ++j) m += v[r * n + j];
    m *= inv_n;
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (v[r * n + j] - m) * (v[r * n + j] - m);
    means[r] = m;
    out[r] = s * inv_n;
  }
  return Var::from_op(std::move(out), {x}, [n, inv_n, means = std::move(means)](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t r = 0; r < self.grad.size(); ++r)
      for (std::size_t j = 0; j < n; ++j)
        g[r * n + j] += self.grad[r] * 2.0 * inv_n * (p.value[r * n + j] - means[r]);
  });
}

Var softmax_lastdim(const Var& x) {
  const std::size_t n = last_dim(x, "softmax_lastdim");
  if (n == 0) throw ContractError("softmax over empty axis");
  const Tensor& v = x.value();
  if (!v.all_finite()) throw NumericError("softmax: non-finite input");
  Tensor out(v.shape());
  const std::size_t rows = v.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = v.data().data() + r * n;
    double* o = out.data().data() + r * n;
    const double m = *std::max_element(in, in + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (o[j] = std::exp(in[j] - m));
    for (std::size_t j = 0; j < n; ++j) o[j] /= s;
  }
  return Var::from_op(std::move(out), {x}, [n, rows](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[r * n + j] * self.value[r * n + j];
      for (std::size_t j = 0; j < n; ++j)
        g[r * n + j] += self.value[r * n + j] * (self.grad[r * n + j] - dot);
    }
  });
}

Var log_softmax_lastdim(const Var& x) {
  const std::size_t n = last_dim(x, "log_softmax_lastdim");
  if (n == 0) throw ContractError("log_softmax over empty axis");
  const Tensor& v = x.value();
  if (!v.all_finite()) throw NumericError("log_softmax: non-finite input");
  Tensor out(v.shape());
  const std::size_t rows = v.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = v.data().data() + r * n;
    const double m = *std::max_element(in, in + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(in[j] - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = in[j] - lse;
  }
  return Var::from_op(std::move(out), {x}, [n, rows](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += self.grad[r * n + j];
      for (std::size_t j = 0; j < n; ++j)
        g[r * n + j] += self.grad[r * n + j] - std::exp(self.value[r * n + j]) * gs;
    }
  });
}

Var layer_norm_lastdim(const Var& x, const Var& gain, const Var& bias, double eps) {
  const std::size_t n = last_dim(x, "layer_norm_lastdim");
  if (n < 2) throw ShapeError("layer_norm: degenerate normalized dimension of size " + std::to_string(n));
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n}) {
    throw ShapeError("layer_norm: gain/bias must have shape [" + std::to_string(n) + "], got " +
                     shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  }
  const Tensor& v = x.value();
  const std::size_t rows = v.size() / n;
  Tensor xhat(v.shape());
  std::vector<double> rstd(rows);
  Tensor out(v.shape());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < rows; ++r) {
    double m = 0.0;
    for (std::size_t j = 0; j < n; ++j) m += v[r * n + j];
    m *= inv_n;
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (v[r * n + j] - m) * (v[r * n + j] - m);
    rstd[r] = 1.0 / std::sqrt(s * inv_n + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (v[r * n + j] - m) * rstd[r];
      out[r * n + j] = xhat[r * n + j] * gain.value()[j] + bias.value()[j];
    }
  }
  return Var::from_op(
      std::move(out), {x, gain, bias},
      [n, rows, inv_n, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const Tensor& G = self.grad;
        if (pg.requires_grad || pb.requires_grad) {
          Tensor& gg = pg.grad_buffer();
          Tensor& gb = pb.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) {
              if (pg.requires_grad) gg[j] += G[r * n + j] * xhat[r * n + j];
              if (pb.requires_grad) gb[j] += G[r * n + j];
            }
        }
        if (px.requires_grad) {
          Tensor& gx = px.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = G[r * n + j] * pg.value[j];
              mean_d += d;
              mean_dx += d * xhat[r * n + j];
            }
            mean_d *= inv_n;
            mean_dx *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = G[r * n + j] * pg.value[j];
              gx[r * n + j] += rstd[r] * (d - mean_d - xhat[r * n + j] * mean_dx);
            }
          }
        }
      });
}

Var dropout(const Var& x, double rate, bool training, Rng* rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  if (!rng) throw ContractError("dropout in training mode requires a random stream");
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask(x.shape());
  for (double& m : mask.data()) m = rng->bernoulli(1.0 - rate) ? keep_scale : 0.0;
  return mul(x, Var::constant(std::move(mask)));
}

}  // namespace ops

}  // namespace disents
