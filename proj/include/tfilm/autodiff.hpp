#pragma once

// Tape-based reverse-mode differentiation. Every op records its inputs and a
// backward closure on a Node; the tape is simply the DAG reachable from the
// root and is rebuilt on every forward pass.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tfilm/tensor.hpp"

namespace tfilm::ad {

struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;
  bool leaf = true;
  std::string op;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  // Optimizers and finite-difference probes write parameter values in place.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::string& op() const { return node_->op; }

  // Gradient accumulated so far; zeros if nothing has flowed in.
  Tensor grad() const { return node_->grad.empty() ? Tensor::zeros_like(node_->value) : node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad = Tensor(); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

inline Var parameter(Tensor value, std::string name = {}) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->op = name.empty() ? "param" : std::move(name);
  return Var(std::move(n));
}

inline Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = "const";
  return Var(std::move(n));
}

// Same value, no gradient path.
inline Var detach(const Var& v) { return constant(v.value()); }

inline void accumulate(Node& n, const Tensor& g) {
  if (!n.requires_grad) return;
  if (n.grad.empty())
    n.grad = g;
  else
    add_into(n.grad, g);
}

// Creates an interior node. Inputs are retained only when some input needs a
// gradient, so inference-only graphs free intermediates eagerly.
inline Var make_op(std::string op, Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = std::move(op);
  n->leaf = false;
  for (const auto& in : inputs) n->requires_grad = n->requires_grad || in.requires_grad();
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (auto& in : inputs) n->inputs.push_back(in.node_ptr());
    n->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(n));
}

// Accumulates d(root)/d(leaf) into every reachable leaf that requires a
// gradient. Interior gradients are reset on each call; leaf gradients
// accumulate across calls until zero_grad().
inline void backward(const Var& root) {
  if (root.value().size() != 1)
    fail(ErrorCode::NonScalarRoot, "backward root has shape " + shape_str(root.shape()));
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order)
    if (!n->leaf) n->grad = Tensor();

  accumulate(*root.node(), Tensor::ones(root.shape()));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->leaf || n->grad.empty() || !n->backward_fn) continue;
    n->backward_fn(*n);
  }
  for (Node* n : order)
    if (!n->leaf) n->grad = Tensor();
}

// ---- elementwise ----

inline Var add(const Var& a, const Var& b) {
  return make_op("add", tfilm::add(a.value(), b.value()), {a, b}, [](Node& n) {
    accumulate(*n.inputs[0], n.grad);
    accumulate(*n.inputs[1], n.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  return make_op("sub", tfilm::sub(a.value(), b.value()), {a, b}, [](Node& n) {
    accumulate(*n.inputs[0], n.grad);
    accumulate(*n.inputs[1], tfilm::scale(n.grad, -1.0));
  });
}

inline Var mul(const Var& a, const Var& b) {
  return make_op("mul", tfilm::mul(a.value(), b.value()), {a, b}, [](Node& n) {
    const Tensor& av = n.inputs[0]->value;
    const Tensor& bv = n.inputs[1]->value;
    if (n.inputs[0]->requires_grad) accumulate(*n.inputs[0], tfilm::mul(n.grad, bv));
    if (n.inputs[1]->requires_grad) accumulate(*n.inputs[1], tfilm::mul(n.grad, av));
  });
}

inline Var scale(const Var& a, double s) {
  return make_op("scale", tfilm::scale(a.value(), s), {a},
                 [s](Node& n) { accumulate(*n.inputs[0], tfilm::scale(n.grad, s)); });
}

inline Var add_scalar(const Var& a, double s) {
  return make_op("add_scalar", tfilm::add_scalar(a.value(), s), {a},
                 [](Node& n) { accumulate(*n.inputs[0], n.grad); });
}

inline Var sigmoid(const Var& a) {
  Tensor y = detail::map(a.value(), [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return make_op("sigmoid", y, {a}, [](Node& n) {
    Tensor g = n.grad;
    auto gd = g.data();
    auto yd = n.value.data();
    for (std::size_t i = 0; i < gd.size(); ++i) gd[i] *= yd[i] * (1.0 - yd[i]);
    accumulate(*n.inputs[0], g);
  });
}

inline Var tanh(const Var& a) {
  Tensor y = detail::map(a.value(), [](double x) { return std::tanh(x); });
  return make_op("tanh", y, {a}, [](Node& n) {
    Tensor g = n.grad;
    auto gd = g.data();
    auto yd = n.value.data();
    for (std::size_t i = 0; i < gd.size(); ++i) gd[i] *= 1.0 - yd[i] * yd[i];
    accumulate(*n.inputs[0], g);
  });
}

// Subgradient at 0 is 0.
inline Var relu(const Var& a) {
  Tensor y = detail::map(a.value(), [](double x) { return x > 0.0 ? x : 0.0; });
  return make_op("relu", y, {a}, [](Node& n) {
    Tensor g = n.grad;
    auto gd = g.data();
    auto xd = n.inputs[0]->value.data();
    for (std::size_t i = 0; i < gd.size(); ++i)
      if (!(xd[i] > 0.0)) gd[i] = 0.0;
    accumulate(*n.inputs[0], g);
  });
}

// ---- reductions ----

inline Var sum(const Var& a) {
  return make_op("sum", Tensor::scalar(tfilm::sum(a.value())), {a}, [](Node& n) {
    accumulate(*n.inputs[0], Tensor(n.inputs[0]->value.shape(), n.grad[0]));
  });
}

inline Var mean(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a.value().size());
  return make_op("mean", Tensor::scalar(tfilm::sum(a.value()) * inv), {a}, [inv](Node& n) {
    accumulate(*n.inputs[0], Tensor(n.inputs[0]->value.shape(), n.grad[0] * inv));
  });
}

inline Var reduce_max(const Var& a, std::size_t axis) {
  std::vector<std::size_t> arg;
  Tensor y = tfilm::reduce_max(a.value(), axis, &arg);
  return make_op("reduce_max", std::move(y), {a}, [axis, arg = std::move(arg)](Node& n) {
    const auto sp = detail::split_axis(n.inputs[0]->value.shape(), axis);
    Tensor g = Tensor::zeros_like(n.inputs[0]->value);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t k = o * sp.inner + i;
        g[(o * sp.extent + arg[k]) * sp.inner + i] += n.grad[k];
      }
    accumulate(*n.inputs[0], g);
  });
}

// ---- linear algebra ----

inline Var matmul(const Var& a, const Var& b) {
  return make_op("matmul", tfilm::matmul(a.value(), b.value()), {a, b}, [](Node& n) {
    const Tensor& av = n.inputs[0]->value;
    const Tensor& bv = n.inputs[1]->value;
    if (n.inputs[0]->requires_grad) accumulate(*n.inputs[0], tfilm::matmul(n.grad, transpose(bv)));
    if (n.inputs[1]->requires_grad) accumulate(*n.inputs[1], tfilm::matmul(transpose(av), n.grad));
  });
}

// x[..., M] + b[M], the bias is repeated over all leading positions.
inline Var add_bias(const Var& x, const Var& b) {
  const std::size_t m = b.value().size();
  if (b.value().rank() != 1 || x.shape().back() != m)
    fail(ErrorCode::ShapeMismatch, "add_bias: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
  Tensor y = x.value();
  auto yd = y.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] += bd[i % m];
  return make_op("add_bias", std::move(y), {x, b}, [m](Node& n) {
    accumulate(*n.inputs[0], n.grad);
    if (n.inputs[1]->requires_grad) {
      Tensor gb(Shape{m});
      auto g = n.grad.data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % m] += g[i];
      accumulate(*n.inputs[1], gb);
    }
  });
}

// ---- structure ----

inline Var reshape(const Var& a, Shape shape) {
  return make_op("reshape", a.value().reshaped(std::move(shape)), {a}, [](Node& n) {
    accumulate(*n.inputs[0], n.grad.reshaped(n.inputs[0]->value.shape()));
  });
}

inline Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  return make_op("slice", tfilm::slice(a.value(), axis, begin, end), {a}, [axis, begin](Node& n) {
    const Tensor& in = n.inputs[0]->value;
    const auto sp = detail::split_axis(in.shape(), axis);
    const std::size_t w = n.value.dim(axis) * sp.inner;
    Tensor g = Tensor::zeros_like(in);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const double* src = n.grad.data().data() + o * w;
      double* dst = g.data().data() + (o * sp.extent + begin) * sp.inner;
      for (std::size_t i = 0; i < w; ++i) dst[i] += src[i];
    }
    accumulate(*n.inputs[0], g);
  });
}

inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(p.value());
  return make_op("concat", tfilm::concat(values, axis), parts, [axis](Node& n) {
    std::size_t at = 0;
    for (auto& in : n.inputs) {
      const std::size_t w = in->value.dim(axis);
      if (in->requires_grad) accumulate(*in, tfilm::slice(n.grad, axis, at, at + w));
      at += w;
    }
  });
}

// Stacks equal-shaped tensors along a new axis inserted at `axis`.
inline Var stack(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) fail(ErrorCode::ShapeMismatch, "stack of zero tensors");
  std::vector<Var> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, axis);
}

// ---- finite-difference verification ----

struct GradEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;
  std::size_t unresolved = 0;
};

struct GradReport {
  std::vector<GradEntry> entries;
  double max_rel_error = 0.0;
  double h = 0.0;
  double tol = 0.0;
  std::size_t excluded = 0;
  std::size_t unresolved = 0;
  bool pass = true;
};

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-4;
  // One-sided slopes disagreeing by more than this (relative) mark a kink
  // (relu/max tie) inside [p-h, p+h]; such coordinates are excluded.
  double kink_tol = 1e-3;
  // A mismatch whose absolute size is below roundoff_ulps * eps * max(1,|f|) / h
  // is beneath what the central difference can resolve in double precision;
  // such coordinates are counted as unresolved rather than compared.
  double roundoff_ulps = 32.0;
  // 0 checks every coordinate; otherwise an evenly strided subset.
  std::size_t max_coords_per_param = 0;
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

// Compares reverse-mode gradients of the scalar `f` against central
// differences. `f` must rebuild its graph from the current parameter values.
inline GradReport finite_diff_check(const std::function<Var()>& f,
                                    const std::vector<std::pair<std::string, Var>>& params,
                                    const GradCheckOptions& opt = {}) {
  if (!(opt.h > 0.0)) fail(ErrorCode::InvalidSpec, "finite difference step must be positive");
  GradReport report;
  report.h = opt.h;
  report.tol = opt.tol;

  for (auto [name, p] : params) p.zero_grad();
  Var root = f();
  const double f0 = root.value()[0];
  {
    const double again = f().value()[0];
    if (std::memcmp(&again, &f0, sizeof(double)) != 0)
      fail(ErrorCode::NonDeterministicFunction, "two forward passes at identical parameters differ");
  }
  backward(root);
  root = Var();
  const double floor_abs =
      opt.roundoff_ulps * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f0)) / opt.h;

  for (auto [name, p] : params) {
    GradEntry e{name};
    const Tensor analytic = p.grad();
    Tensor& v = p.mutable_value();
    const std::size_t n = v.size();
    const std::size_t stride =
        opt.max_coords_per_param == 0 || n <= opt.max_coords_per_param ? 1 : (n + opt.max_coords_per_param - 1) / opt.max_coords_per_param;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = v[i];
      v[i] = orig + opt.h;
      const double fp = f().value()[0];
      v[i] = orig - opt.h;
      const double fm = f().value()[0];
      v[i] = orig;
      const double fwd = (fp - f0) / opt.h;
      const double bwd = (f0 - fm) / opt.h;
      if (std::abs(fwd - bwd) > opt.kink_tol * std::max({1.0, std::abs(fwd), std::abs(bwd)})) {
        ++e.excluded;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * opt.h);
      const double err = relative_error(analytic[i], numeric);
      if (err >= opt.tol && std::abs(analytic[i] - numeric) <= floor_abs) {
        ++e.unresolved;
        continue;
      }
      e.max_rel_error = std::max(e.max_rel_error, err);
      ++e.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
    report.excluded += e.excluded;
    report.unresolved += e.unresolved;
    report.entries.push_back(std::move(e));
  }
  report.pass = report.max_rel_error < opt.tol;
  return report;
}

}  // namespace tfilm::ad
