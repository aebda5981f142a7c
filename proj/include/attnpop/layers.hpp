#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "attnpop/autodiff.hpp"
#include "attnpop/random.hpp"

namespace attnpop {

/// Glorot-uniform matrix [rows x cols], limit sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return Tensor::matrix(rows, cols, std::move(v));
}

struct DenseLayer {
  Parameter weight;  // [out x in]
  Parameter bias;    // [out]
  Activation activation = Activation::identity;

  static DenseLayer create(const std::string& name, std::size_t in, std::size_t out, Activation act, Rng& rng) {
    if (in == 0 || out == 0) throw ArgumentError("dense layer '" + name + "' needs positive dimensions");
    return DenseLayer{{name + ".weight", glorot_uniform(out, in, rng)},
                      {name + ".bias", Tensor::zeros({out})},
                      act};
  }

  std::size_t in_dim() const { return weight.value.dim(1); }
  std::size_t out_dim() const { return weight.value.dim(0); }
};

inline Var dense_forward(Tape& tape, const DenseLayer& layer, Var x) {
  const auto& xv = x.value();
  if (xv.rank() != 1 || xv.size() != layer.in_dim()) {
    throw ShapeError("dense layer " + layer.weight.name + " expects input [" + std::to_string(layer.in_dim()) +
                     "], got " + shape_string(xv.shape()));
  }
  auto pre = add(matmul(tape.parameter(layer.weight), x), tape.parameter(layer.bias));
  if (layer.activation == Activation::identity) return pre;
  return activate(pre, layer.activation);
}

/// Two-layer scoring network followed by softmax pooling:
///   u_i = tanh(W_u q_i + b_u),  a_i = W_a u_i + b_a,  weights = softmax(a),
///   pooled = sum_i weights_i q_i.
struct AttentionBlock {
  Parameter w_u;  // [hidden x in]
  Parameter b_u;  // [hidden]
  Parameter w_a;  // [1 x hidden]
  Parameter b_a;  // [1]

  static AttentionBlock create(const std::string& name, std::size_t in, std::size_t hidden, Rng& rng) {
    if (in == 0 || hidden == 0) throw ArgumentError("attention block '" + name + "' needs positive dimensions");
    AttentionBlock block;
    block.w_u = {name + ".w_u", glorot_uniform(hidden, in, rng)};
    block.b_u = {name + ".b_u", Tensor::zeros({hidden})};
    block.w_a = {name + ".w_a", glorot_uniform(1, hidden, rng)};
    block.b_a = {name + ".b_a", Tensor::zeros({1})};
    return block;
  }

  std::size_t in_dim() const { return w_u.value.dim(1); }
  std::size_t hidden_dim() const { return w_u.value.dim(0); }
};

struct AttentionResult {
  Var weights;  // [N]
  Var pooled;   // same dimension as each input
};

inline AttentionResult attention_forward(Tape& tape, const AttentionBlock& block, std::span<const Var> inputs) {
  if (inputs.empty()) throw ArgumentError("attention over an empty sequence");
  const auto w_u = tape.parameter(block.w_u);
  const auto b_u = tape.parameter(block.b_u);
  const auto w_a = tape.parameter(block.w_a);
  const auto b_a = tape.parameter(block.b_a);
  std::vector<Var> scores;
  scores.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& q = inputs[i].value();
    if (q.rank() != 1 || q.size() != block.in_dim()) {
      throw ShapeError("attention input " + std::to_string(i) + " has shape " + shape_string(q.shape()) +
                       ", expected [" + std::to_string(block.in_dim()) + "]");
    }
    auto u = activate(add(matmul(w_u, inputs[i]), b_u), Activation::tanh);
    scores.push_back(matmul(w_a, u));
  }
  // a_i = W_a u_i + b_a, normalized with softmax.
  auto weights = softmax_with_offset(concat(scores), b_a);
  return {weights, weighted_sum(weights, inputs)};
}

/// Mean pooling with fixed uniform weights; the non-attention baseline.
inline AttentionResult mean_pool(Tape& tape, std::span<const Var> inputs) {
  if (inputs.empty()) throw ArgumentError("pooling over an empty sequence");
  const auto n = inputs.size();
  auto weights = tape.constant(Tensor::filled({n}, 1.0 / static_cast<double>(n)));
  return {weights, weighted_sum(weights, inputs)};
}

/// LSTM cell over the concatenated input [x; h]. Gates i, f, o use sigmoid,
/// the candidate g uses tanh.
struct LstmCell {
  DenseLayer input_gate;
  DenseLayer forget_gate;
  DenseLayer output_gate;
  DenseLayer candidate;

  static LstmCell create(const std::string& name, std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
    const auto cat = input_dim + hidden_dim;
    LstmCell cell{DenseLayer::create(name + ".input", cat, hidden_dim, Activation::sigmoid, rng),
                  DenseLayer::create(name + ".forget", cat, hidden_dim, Activation::sigmoid, rng),
                  DenseLayer::create(name + ".output", cat, hidden_dim, Activation::sigmoid, rng),
                  DenseLayer::create(name + ".candidate", cat, hidden_dim, Activation::tanh, rng)};
    cell.forget_gate.bias.value = Tensor::filled({hidden_dim}, 1.0);
    return cell;
  }

  std::size_t hidden_dim() const { return input_gate.out_dim(); }
  std::size_t input_dim() const { return input_gate.in_dim() - hidden_dim(); }
};

struct LstmState {
  Var h;
  Var c;
};

inline LstmState lstm_step(Tape& tape, const LstmCell& cell, Var x, Var h, Var c) {
  const auto hd = cell.hidden_dim();
  if (x.value().rank() != 1 || x.value().size() != cell.input_dim()) {
    throw ShapeError("lstm input has shape " + shape_string(x.value().shape()) + ", expected [" +
                     std::to_string(cell.input_dim()) + "]");
  }
  if (h.value().size() != hd || c.value().size() != hd) {
    throw ShapeError("lstm state has shape " + shape_string(h.value().shape()) + "/" +
                     shape_string(c.value().shape()) + ", expected [" + std::to_string(hd) + "]");
  }
  const auto xh = concat({x, h});
  const auto i = dense_forward(tape, cell.input_gate, xh);
  const auto f = dense_forward(tape, cell.forget_gate, xh);
  const auto o = dense_forward(tape, cell.output_gate, xh);
  const auto g = dense_forward(tape, cell.candidate, xh);
  const auto c_next = add(mul(f, c), mul(i, g));
  const auto h_next = mul(o, activate(c_next, Activation::tanh));
  return {h_next, c_next};
}

struct BiLstm {
  LstmCell forward_cell;
  LstmCell backward_cell;

  static BiLstm create(const std::string& name, std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
    auto fwd = LstmCell::create(name + ".fwd", input_dim, hidden_dim, rng);
    auto bwd = LstmCell::create(name + ".bwd", input_dim, hidden_dim, rng);
    return {std::move(fwd), std::move(bwd)};
  }

  std::size_t hidden_dim() const { return forward_cell.hidden_dim(); }
  std::size_t input_dim() const { return forward_cell.input_dim(); }
};

struct BiLstmOutput {
  std::vector<Var> states;     // concat(forward_t, backward_t), each [2 * hidden]
  std::vector<Var> forward_h;  // left-to-right hidden states
  std::vector<Var> backward_h;  // right-to-left hidden states, indexed by position
};

inline BiLstmOutput bilstm_forward(Tape& tape, const BiLstm& net, std::span<const Var> seq) {
  if (seq.empty()) throw ArgumentError("bidirectional LSTM over an empty sequence");
  if (net.forward_cell.hidden_dim() != net.backward_cell.hidden_dim() ||
      net.forward_cell.input_dim() != net.backward_cell.input_dim()) {
    throw ShapeError("bidirectional LSTM cells disagree on dimensions");
  }
  const auto t_len = seq.size();
  const auto hd = net.hidden_dim();
  BiLstmOutput out;
  out.forward_h.resize(t_len);
  out.backward_h.resize(t_len);

  LstmState s{tape.constant(Tensor::zeros({hd})), tape.constant(Tensor::zeros({hd}))};
  for (std::size_t t = 0; t < t_len; ++t) {
    s = lstm_step(tape, net.forward_cell, seq[t], s.h, s.c);
    out.forward_h[t] = s.h;
  }
  s = {tape.constant(Tensor::zeros({hd})), tape.constant(Tensor::zeros({hd}))};
  for (std::size_t t = t_len; t-- > 0;) {
    s = lstm_step(tape, net.backward_cell, seq[t], s.h, s.c);
    out.backward_h[t] = s.h;
  }
  out.states.reserve(t_len);
  for (std::size_t t = 0; t < t_len; ++t) out.states.push_back(concat({out.forward_h[t], out.backward_h[t]}));
  return out;
}

/// Inverted dropout masks drawn from a generator seeded by (seed, call index).
class DropoutStream {
 public:
  explicit DropoutStream(std::uint64_t seed) : seed_(seed) {}

  Tensor mask(const Shape& shape, double rate) {
    Rng rng{seed_, calls_++};
    std::vector<double> m(shape_size(shape));
    const double keep_scale = 1.0 / (1.0 - rate);
    for (auto& v : m) v = rng.uniform() < rate ? 0.0 : keep_scale;
    return Tensor(shape, std::move(m));
  }

  std::uint64_t calls() const noexcept { return calls_; }

 private:
  std::uint64_t seed_;
  std::uint64_t calls_ = 0;
};

inline void check_dropout_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ArgumentError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
}

inline Tensor dropout_apply(const Tensor& t, double rate, DropoutStream& stream, bool training) {
  check_dropout_rate(rate);
  if (!training || rate == 0.0) return t;
  const auto m = stream.mask(t.shape(), rate);
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = t[i] * m[i];
  return Tensor(t.shape(), std::move(out));
}

inline Var dropout(Tape& tape, Var x, double rate, DropoutStream* stream, bool training) {
  check_dropout_rate(rate);
  if (!training || rate == 0.0 || stream == nullptr) return x;
  return mul(x, tape.constant(stream->mask(x.value().shape(), rate)));
}

}  // namespace attnpop
