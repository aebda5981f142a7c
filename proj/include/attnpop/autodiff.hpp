#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "attnpop/error.hpp"
#include "attnpop/tensor.hpp"

namespace attnpop {

/// A named, possibly frozen, model weight.
struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
};

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t index = 0;

  const Tensor& value() const;
};

enum class OpKind {
  constant,
  input,
  parameter,
  matmul,
  add,
  sub,
  mul,
  scale,
  activate,
  softmax,
  softmax_offset,
  concat,
  sum,
  add_n,
  weighted_sum,
  bce_logits,
};

/// Records primitive operations of one forward pass. Nodes are appended in
/// evaluation order, so the node list is already topologically sorted and
/// backward walks it in reverse. A tape is used by a single thread and
/// rebuilt for every forward pass.
class Tape {
 public:
  struct Node {
    OpKind op = OpKind::constant;
    std::vector<std::size_t> parents;
    Tensor value;
    Activation activation = Activation::identity;
    double scalar = 0.0;
    const Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) {
    require_finite(value, "constant");
    return push({.op = OpKind::constant, .value = std::move(value)});
  }

  /// Leaf whose gradient backward() reports when `requires_grad` is set.
  Var input(Tensor value, bool requires_grad = true) {
    require_finite(value, "input");
    return push({.op = OpKind::input, .value = std::move(value), .requires_grad = requires_grad});
  }

  /// Leaf bound to a parameter. Repeated calls for the same parameter share a node.
  Var parameter(const Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second};
    require_finite(p.value, p.name.c_str());
    auto v = push({.op = OpKind::parameter, .value = p.value, .param = &p, .requires_grad = true});
    param_nodes_.emplace(&p, v.index);
    return v;
  }

  const Node& node(std::size_t i) const { return nodes_.at(i); }
  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(Var v) const { return nodes_.at(v.index).value; }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  /// Re-evaluates every recorded operation from the leaves and returns all
  /// node values. Bitwise equal to the recorded forward values.
  std::vector<Tensor> replay() const;

 private:
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

inline const Tensor& Var::value() const {
  if (tape == nullptr) throw UsageError("variable is not attached to a tape");
  return tape->value(*this);
}

namespace detail {

inline Tape& same_tape(std::initializer_list<Var> vars) {
  Tape* t = nullptr;
  for (const auto& v : vars) {
    if (v.tape == nullptr) throw UsageError("variable is not attached to a tape");
    if (t != nullptr && v.tape != t) throw UsageError("operands recorded on different tapes");
    t = v.tape;
  }
  return *t;
}

inline Tape& same_tape(std::span<const Var> vars) {
  if (vars.empty()) throw ArgumentError("operation needs at least one operand");
  Tape* t = vars.front().tape;
  for (const auto& v : vars) {
    if (v.tape == nullptr) throw UsageError("variable is not attached to a tape");
    if (v.tape != t) throw UsageError("operands recorded on different tapes");
  }
  return *t;
}

inline double bce_from_logit(double s, double y) {
  return std::max(s, 0.0) - s * y + std::log1p(std::exp(-std::abs(s)));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + " shape mismatch: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

// Forward rule shared by recording and replay.
inline Tensor evaluate(const Tape::Node& n, const std::vector<const Tensor*>& in) {
  switch (n.op) {
    case OpKind::constant:
    case OpKind::input:
    case OpKind::parameter:
      return n.value;
    case OpKind::matmul:
      return kernels::matmul(*in[0], *in[1]);
    case OpKind::add:
    case OpKind::sub:
    case OpKind::mul: {
      require_same_shape(*in[0], *in[1], "elementwise");
      std::vector<double> out(in[0]->size());
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double a = (*in[0])[i];
        const double b = (*in[1])[i];
        out[i] = n.op == OpKind::add ? a + b : n.op == OpKind::sub ? a - b : a * b;
      }
      return Tensor(in[0]->shape(), std::move(out));
    }
    case OpKind::scale: {
      std::vector<double> out(in[0]->size());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*in[0])[i] * n.scalar;
      return Tensor(in[0]->shape(), std::move(out));
    }
    case OpKind::activate:
      return kernels::map(*in[0], n.activation);
    case OpKind::softmax:
    case OpKind::softmax_offset:
      // softmax(s + b) == softmax(s) exactly; the offset is an operand so the
      // recorded graph matches the formula, but it cannot perturb the result.
      return kernels::stable_softmax(*in[0]);
    case OpKind::concat: {
      std::vector<double> out;
      for (const auto* t : in) {
        if (t->rank() != 1) throw ShapeError("concat expects rank-1 operands, got " + shape_string(t->shape()));
        out.insert(out.end(), t->values().begin(), t->values().end());
      }
      return Tensor::vector(std::move(out));
    }
    case OpKind::sum: {
      double s = 0.0;
      for (double v : in[0]->values()) s += v;
      return Tensor::vector({s});
    }
    case OpKind::add_n: {
      std::vector<double> out(in[0]->values().begin(), in[0]->values().end());
      for (std::size_t k = 1; k < in.size(); ++k) {
        require_same_shape(*in[0], *in[k], "add_n");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*in[k])[i];
      }
      return Tensor(in[0]->shape(), std::move(out));
    }
    case OpKind::weighted_sum: {
      const Tensor& w = *in[0];
      if (w.rank() != 1 || w.size() + 1 != in.size()) {
        throw ShapeError("weighted_sum needs one weight per item, got weights " + shape_string(w.shape()) + " for " +
                         std::to_string(in.size() - 1) + " items");
      }
      std::vector<double> out(in[1]->size(), 0.0);
      for (std::size_t k = 1; k < in.size(); ++k) {
        require_same_shape(*in[1], *in[k], "weighted_sum");
        const double wk = w[k - 1];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += wk * (*in[k])[i];
      }
      return Tensor(in[1]->shape(), std::move(out));
    }
    case OpKind::bce_logits:
      return Tensor::vector({bce_from_logit(in[0]->item(), n.scalar)});
  }
  throw UsageError("unknown op");
}

inline Var record(Tape& tape, Tape::Node n) {
  std::vector<const Tensor*> in;
  in.reserve(n.parents.size());
  for (auto p : n.parents) in.push_back(&tape.node(p).value);
  n.value = evaluate(n, in);
  if (!n.value.all_finite()) throw NumericError("operation produced a non-finite value");
  n.requires_grad = std::any_of(n.parents.begin(), n.parents.end(),
                                [&](std::size_t p) { return tape.node(p).requires_grad; });
  return tape.push(std::move(n));
}

inline std::vector<std::size_t> indices(std::span<const Var> vars) {
  std::vector<std::size_t> out;
  out.reserve(vars.size());
  for (const auto& v : vars) out.push_back(v.index);
  return out;
}

}  // namespace detail

inline std::vector<Tensor> Tape::replay() const {
  std::vector<Tensor> values;
  values.reserve(nodes_.size());
  for (const auto& n : nodes_) {
    std::vector<const Tensor*> in;
    for (auto p : n.parents) in.push_back(&values[p]);
    values.push_back(detail::evaluate(n, in));
  }
  return values;
}

// Differentiable primitives. Each records one node.

inline Var matmul(Var a, Var b) {
  auto& t = detail::same_tape({a, b});
  return detail::record(t, {.op = OpKind::matmul, .parents = {a.index, b.index}});
}

inline Var add(Var a, Var b) {
  auto& t = detail::same_tape({a, b});
  return detail::record(t, {.op = OpKind::add, .parents = {a.index, b.index}});
}

inline Var sub(Var a, Var b) {
  auto& t = detail::same_tape({a, b});
  return detail::record(t, {.op = OpKind::sub, .parents = {a.index, b.index}});
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  auto& t = detail::same_tape({a, b});
  return detail::record(t, {.op = OpKind::mul, .parents = {a.index, b.index}});
}

inline Var scale(Var a, double factor) {
  auto& t = detail::same_tape({a});
  return detail::record(t, {.op = OpKind::scale, .parents = {a.index}, .scalar = factor});
}

inline Var activate(Var a, Activation kind) {
  auto& t = detail::same_tape({a});
  return detail::record(t, {.op = OpKind::activate, .parents = {a.index}, .activation = kind});
}

inline Var softmax(Var a) {
  auto& t = detail::same_tape({a});
  if (t.value(a).rank() != 1) throw ShapeError("softmax expects a rank-1 tensor");
  return detail::record(t, {.op = OpKind::softmax, .parents = {a.index}});
}

/// softmax(scores + offset) for a one-element offset broadcast over the
/// scores. Softmax is shift invariant, so the offset's derivative is exactly
/// zero and it does not enter the arithmetic.
inline Var softmax_with_offset(Var scores, Var offset) {
  auto& t = detail::same_tape({scores, offset});
  if (t.value(scores).rank() != 1) throw ShapeError("softmax expects a rank-1 tensor");
  if (t.value(offset).size() != 1) throw ShapeError("softmax offset must have one element");
  return detail::record(t, {.op = OpKind::softmax_offset, .parents = {scores.index, offset.index}});
}

inline Var concat(std::span<const Var> parts) {
  auto& t = detail::same_tape(parts);
  return detail::record(t, {.op = OpKind::concat, .parents = detail::indices(parts)});
}

inline Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

/// Sum of all elements, as a one-element tensor.
inline Var sum(Var a) {
  auto& t = detail::same_tape({a});
  return detail::record(t, {.op = OpKind::sum, .parents = {a.index}});
}

inline Var add_n(std::span<const Var> parts) {
  auto& t = detail::same_tape(parts);
  return detail::record(t, {.op = OpKind::add_n, .parents = detail::indices(parts)});
}

/// sum_k weights[k] * items[k]
inline Var weighted_sum(Var weights, std::span<const Var> items) {
  if (items.empty()) throw ArgumentError("weighted_sum of an empty sequence");
  auto& t = detail::same_tape(items);
  detail::same_tape({weights, items.front()});
  std::vector<std::size_t> parents{weights.index};
  for (const auto& v : items) parents.push_back(v.index);
  return detail::record(t, {.op = OpKind::weighted_sum, .parents = std::move(parents)});
}

/// Binary cross-entropy of a one-element logit against label y in {0, 1}.
inline Var bce_with_logits(Var logit, double label) {
  auto& t = detail::same_tape({logit});
  return detail::record(t, {.op = OpKind::bce_logits, .parents = {logit.index}, .scalar = label});
}

/// Result of a reverse pass: gradients keyed by parameter and by input node.
class Gradients {
 public:
  /// Gradient for `p`; zeros when `p` did not contribute to the output.
  Tensor of(const Parameter& p) const {
    if (auto it = params_.find(&p); it != params_.end()) return it->second;
    return Tensor::zeros(p.value.shape());
  }

  Tensor of(Var input) const {
    if (auto it = inputs_.find(input.index); it != inputs_.end()) return it->second;
    throw UsageError("no gradient recorded for node " + std::to_string(input.index) +
                     "; mark it gradient-requiring with Tape::input");
  }

  bool has(const Parameter& p) const { return params_.contains(&p); }

  void set(const Parameter* p, Tensor g) { params_[p] = std::move(g); }
  void set_input(std::size_t index, Tensor g) { inputs_[index] = std::move(g); }

 private:
  std::unordered_map<const Parameter*, Tensor> params_;
  std::unordered_map<std::size_t, Tensor> inputs_;
};

/// Reverse-mode sweep from a one-element output node.
inline Gradients backward(const Tape& tape, Var output) {
  if (output.tape != &tape || output.index >= tape.size()) {
    throw UsageError("backward: output is not recorded on this tape");
  }
  if (tape.value(output).size() != 1) {
    throw UsageError("backward: output must be a scalar, got " + shape_string(tape.value(output).shape()));
  }

  std::vector<std::vector<double>> adj(output.index + 1);
  adj[output.index] = {1.0};

  auto acc = [&](std::size_t node) -> std::vector<double>& {
    auto& a = adj[node];
    if (a.empty()) a.assign(tape.node(node).value.size(), 0.0);
    return a;
  };

  for (std::size_t idx = output.index + 1; idx-- > 0;) {
    if (adj[idx].empty()) continue;
    const auto& n = tape.node(idx);
    if (!n.requires_grad) continue;
    const auto& g = adj[idx];
    const auto& out = n.value;
    switch (n.op) {
      case OpKind::constant:
      case OpKind::input:
      case OpKind::parameter:
        break;
      case OpKind::matmul: {
        const auto& a = tape.node(n.parents[0]).value;
        const auto& b = tape.node(n.parents[1]).value;
        const auto m = a.dim(0);
        const auto k = a.dim(1);
        const auto cols = b.rank() == 2 ? b.dim(1) : 1;
        if (tape.node(n.parents[0]).requires_grad) {
          auto& ga = acc(n.parents[0]);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              for (std::size_t j = 0; j < cols; ++j) s += g[i * cols + j] * b[p * cols + j];
              ga[i * k + p] += s;
            }
        }
        if (tape.node(n.parents[1]).requires_grad) {
          auto& gb = acc(n.parents[1]);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = a[i * k + p];
              for (std::size_t j = 0; j < cols; ++j) gb[p * cols + j] += aip * g[i * cols + j];
            }
        }
        break;
      }
      case OpKind::add:
      case OpKind::sub: {
        const double sign = n.op == OpKind::add ? 1.0 : -1.0;
        if (tape.node(n.parents[0]).requires_grad) {
          auto& ga = acc(n.parents[0]);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (tape.node(n.parents[1]).requires_grad) {
          auto& gb = acc(n.parents[1]);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
        }
        break;
      }
      case OpKind::mul: {
        const auto& a = tape.node(n.parents[0]).value;
        const auto& b = tape.node(n.parents[1]).value;
        if (tape.node(n.parents[0]).requires_grad) {
          auto& ga = acc(n.parents[0]);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
        }
        if (tape.node(n.parents[1]).requires_grad) {
          auto& gb = acc(n.parents[1]);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
        }
        break;
      }
      case OpKind::scale: {
        auto& ga = acc(n.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.scalar;
        break;
      }
      case OpKind::activate: {
        const auto& x = tape.node(n.parents[0]).value;
        auto& ga = acc(n.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * activation_derivative(n.activation, x[i], out[i]);
        break;
      }
      case OpKind::softmax:
      case OpKind::softmax_offset: {
        if (n.op == OpKind::softmax_offset && tape.node(n.parents[1]).requires_grad) acc(n.parents[1]);
        if (!tape.node(n.parents[0]).requires_grad) break;
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * out[i];
        auto& ga = acc(n.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += out[i] * (g[i] - dot);
        break;
      }
      case OpKind::concat: {
        std::size_t offset = 0;
        for (auto p : n.parents) {
          const auto len = tape.node(p).value.size();
          if (tape.node(p).requires_grad) {
            auto& gp = acc(p);
            for (std::size_t i = 0; i < len; ++i) gp[i] += g[offset + i];
          }
          offset += len;
        }
        break;
      }
      case OpKind::sum: {
        auto& ga = acc(n.parents[0]);
        for (auto& v : ga) v += g[0];
        break;
      }
      case OpKind::add_n: {
        for (auto p : n.parents) {
          if (!tape.node(p).requires_grad) continue;
          auto& gp = acc(p);
          for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
        }
        break;
      }
      case OpKind::weighted_sum: {
        const auto& w = tape.node(n.parents[0]).value;
        const bool w_grad = tape.node(n.parents[0]).requires_grad;
        std::vector<double> gw(w.size(), 0.0);
        for (std::size_t k = 1; k < n.parents.size(); ++k) {
          const auto& item = tape.node(n.parents[k]).value;
          if (w_grad) {
            double s = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * item[i];
            gw[k - 1] = s;
          }
          if (tape.node(n.parents[k]).requires_grad) {
            auto& gi = acc(n.parents[k]);
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += w[k - 1] * g[i];
          }
        }
        if (w_grad) {
          auto& ga = acc(n.parents[0]);
          for (std::size_t i = 0; i < gw.size(); ++i) ga[i] += gw[i];
        }
        break;
      }
      case OpKind::bce_logits: {
        const double s = tape.node(n.parents[0]).value.item();
        auto& ga = acc(n.parents[0]);
        ga[0] += g[0] * (sigmoid(s) - n.scalar);
        break;
      }
    }
  }

  Gradients grads;
  for (std::size_t idx = 0; idx <= output.index; ++idx) {
    const auto& n = tape.node(idx);
    if (n.op == OpKind::parameter) {
      grads.set(n.param, adj[idx].empty() ? Tensor::zeros(n.value.shape()) : Tensor(n.value.shape(), adj[idx]));
    } else if (n.op == OpKind::input && n.requires_grad) {
      grads.set_input(idx, adj[idx].empty() ? Tensor::zeros(n.value.shape()) : Tensor(n.value.shape(), adj[idx]));
    }
  }
  return grads;
}

/// Builds a scalar objective on the given tape from the current parameter values.
using ScalarObjective = std::function<Var(Tape&)>;

inline double evaluate_objective(const ScalarObjective& f) {
  Tape tape;
  return f(tape).value().item();
}

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_coordinate = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  bool passed(double tolerance) const { return max_relative_error < tolerance; }
};

/// Compares supplied analytic gradients (one per parameter, same order)
/// against central differences (f(p+eps) - f(p-eps)) / (2 eps). Relative
/// error per coordinate uses max(|analytic|, |numeric|, 1e-12) as denominator.
inline GradientCheckResult compare_with_finite_differences(const ScalarObjective& f,
                                                           std::span<Parameter* const> params,
                                                           std::span<const Tensor> analytic, double eps) {
  if (!(eps > 0.0)) throw ArgumentError("finite difference step must be positive");
  if (analytic.size() != params.size()) throw ArgumentError("one analytic gradient per parameter required");
  const double base = evaluate_objective(f);
  if (evaluate_objective(f) != base) throw OracleError("objective is not deterministic");

  GradientCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    if (analytic[k].shape() != p.value.shape()) {
      throw ShapeError("analytic gradient for " + p.name + " has shape " + shape_string(analytic[k].shape()));
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double original = p.value[i];
      p.value[i] = original + eps;
      const double up = evaluate_objective(f);
      p.value[i] = original - eps;
      const double down = evaluate_objective(f);
      p.value[i] = original;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      const double rel = std::abs(a - numeric) / denom;
      if (rel >= result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_parameter = p.name;
        result.worst_coordinate = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

/// Gradient check of backward() against central differences for every coordinate of `params`.
inline GradientCheckResult finite_difference_check(const ScalarObjective& f, std::span<Parameter* const> params,
                                                   double eps) {
  if (!(eps > 0.0)) throw ArgumentError("finite difference step must be positive");
  Tape tape;
  const Var out = f(tape);
  const auto grads = backward(tape, out);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(grads.of(*p));
  return compare_with_finite_differences(f, params, analytic, eps);
}

}  // namespace attnpop
