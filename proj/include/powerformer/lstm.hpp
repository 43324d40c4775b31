#ifndef POWERFORMER_LSTM_HPP
#define POWERFORMER_LSTM_HPP

#include <string>
#include <utility>
#include <vector>

#include "powerformer/rng.hpp"
#include "powerformer/tensor.hpp"

namespace powerformer {

/// Gate weights for a single-layer LSTM. Each gate consumes the concatenated
/// [x_t, h_{t-1}] of width V + d_h; matrices are stored as (d_h, V + d_h).
struct LstmParams {
  Tensor w_forget, w_input, w_output, w_cell;  // (d_h, V + d_h)
  Tensor b_forget, b_input, b_output, b_cell;  // (d_h)

  std::size_t hidden_size() const { return w_forget.shape()[0]; }
  std::size_t input_size() const { return w_forget.shape()[1] - w_forget.shape()[0]; }

  /// Uniform init in +/- 1/sqrt(d_h); the forget bias starts at +1 so early
  /// steps carry state instead of erasing it.
  static LstmParams init(std::size_t n_inputs, std::size_t d_h, Rng& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(d_h));
    const std::vector<std::size_t> wshape{d_h, n_inputs + d_h};
    LstmParams p;
    p.w_forget = Tensor::uniform(wshape, rng, -s, s);
    p.w_input = Tensor::uniform(wshape, rng, -s, s);
    p.w_output = Tensor::uniform(wshape, rng, -s, s);
    p.w_cell = Tensor::uniform(wshape, rng, -s, s);
    p.b_forget = Tensor::full({d_h}, 1.0);
    p.b_input = Tensor::zeros({d_h});
    p.b_output = Tensor::zeros({d_h});
    p.b_cell = Tensor::zeros({d_h});
    return p;
  }

  std::vector<std::pair<std::string, Tensor*>> parameters(const std::string& prefix) {
    return {{prefix + ".w_forget", &w_forget}, {prefix + ".w_input", &w_input},
            {prefix + ".w_output", &w_output}, {prefix + ".w_cell", &w_cell},
            {prefix + ".b_forget", &b_forget}, {prefix + ".b_input", &b_input},
            {prefix + ".b_output", &b_output}, {prefix + ".b_cell", &b_cell}};
  }
};

/// Hidden and cell state. |h| < 1 elementwise by construction
/// (h = o * tanh(C) with o in (0,1)).
struct LstmState {
  Tensor h;  // (B, d_h)
  Tensor c;  // (B, d_h)

  static LstmState zero(std::size_t batch, std::size_t d_h) {
    return LstmState{Tensor::zeros({batch, d_h}), Tensor::zeros({batch, d_h})};
  }
};

/// One gated update:
///   f = sig(Wf [x,h] + bf),  i = sig(Wi [x,h] + bi),  o = sig(Wo [x,h] + bo)
///   c_new = f * c + i * tanh(Wc [x,h] + bc),  h_new = o * tanh(c_new)
inline LstmState lstm_step(const Tensor& x_t, const LstmState& state,
                           const LstmParams& params) {
  if (x_t.rank() != 2)
    throw std::invalid_argument("lstm_step: x_t must have shape (B, V)");
  const std::size_t v = params.input_size();
  const std::size_t d_h = params.hidden_size();
  if (x_t.shape()[1] != v || state.h.shape()[1] != d_h ||
      state.h.shape()[0] != x_t.shape()[0])
    throw std::invalid_argument(detail::str(
        "lstm_step: shapes inconsistent: x ", detail::shape_str(x_t.shape()),
        ", h ", detail::shape_str(state.h.shape()), ", params expect V=", v,
        " d_h=", d_h));

  Tensor cat = concat({x_t, state.h}, 1);  // (B, V + d_h)
  Tensor f = sigmoid(add(matmul(cat, transpose_last(params.w_forget)), params.b_forget));
  Tensor i = sigmoid(add(matmul(cat, transpose_last(params.w_input)), params.b_input));
  Tensor o = sigmoid(add(matmul(cat, transpose_last(params.w_output)), params.b_output));
  Tensor candidate = tanh(add(matmul(cat, transpose_last(params.w_cell)), params.b_cell));
  Tensor c_new = add(mul(f, state.c), mul(i, candidate));
  Tensor h_new = mul(o, tanh(c_new));
  return LstmState{h_new, c_new};
}

/// Run the cell over the time axis from a zero initial state and stack the
/// hidden vectors: (B, T, V) -> (B, T, d_h). Gradient flows through every step.
inline Tensor lstm_sequence(const Tensor& x, const LstmParams& params) {
  if (x.rank() != 3)
    throw std::invalid_argument("lstm_sequence: input must have shape (B, T, V)");
  const std::size_t batch = x.shape()[0];
  const std::size_t steps = x.shape()[1];
  if (steps == 0) throw std::invalid_argument("lstm_sequence: empty time axis");
  const std::size_t d_h = params.hidden_size();

  LstmState state = LstmState::zero(batch, d_h);
  std::vector<Tensor> hidden;
  hidden.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor x_t = reshape(slice(x, 1, t, 1), {batch, x.shape()[2]});
    state = lstm_step(x_t, state, params);
    hidden.push_back(reshape(state.h, {batch, 1, d_h}));
  }
  if (hidden.size() == 1) return hidden[0];
  return concat(hidden, 1);
}

/// Position-wise affine projection of the hidden sequence into model width:
/// (B, T, d_h) x (d_h, d_model) + (d_model).
inline Tensor embed_project(const Tensor& h, const Tensor& w_e, const Tensor& b_e) {
  if (h.rank() != 3 || w_e.rank() != 2 || h.shape()[2] != w_e.shape()[0] ||
      b_e.rank() != 1 || b_e.shape()[0] != w_e.shape()[1])
    throw std::invalid_argument(detail::str(
        "embed_project: widths disagree: h ", detail::shape_str(h.shape()), ", W ",
        detail::shape_str(w_e.shape()), ", b ", detail::shape_str(b_e.shape())));
  return add(matmul(h, w_e), b_e);
}

}  // namespace powerformer

#endif  // POWERFORMER_LSTM_HPP
