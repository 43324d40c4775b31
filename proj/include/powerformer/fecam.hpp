#ifndef POWERFORMER_FECAM_HPP
#define POWERFORMER_FECAM_HPP

#include <string>
#include <utility>
#include <vector>

#include "powerformer/rng.hpp"
#include "powerformer/tensor.hpp"

namespace powerformer {

/// Orthonormal DCT-II basis: row l holds the l-th basis vector, row 0 is the
/// constant vector scaled by 1/sqrt(L). basis * basis^T = I, so transforms
/// preserve energy (Parseval).
struct DctBasis {
  Tensor matrix;  // (L, L)
  std::size_t length = 0;

  static DctBasis make(std::size_t length) {
    if (length == 0) throw std::invalid_argument("DctBasis: zero length");
    Tensor m = Tensor::zeros({length, length});
    const double n = static_cast<double>(length);
    const double pi = 3.14159265358979323846;
    for (std::size_t l = 0; l < length; ++l) {
      const double scale = l == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
      for (std::size_t t = 0; t < length; ++t)
        m.data()[l * length + t] =
            scale * std::cos(pi * (static_cast<double>(t) + 0.5) * static_cast<double>(l) / n);
    }
    return DctBasis{m, length};
  }
};

/// Gate parameters: two dense layers squeezing the L frequency coefficients
/// of a channel to one weight, plus the affine of the closing normalization.
struct FecamParams {
  Tensor w1;     // (L, d_int)
  Tensor w2;     // (d_int, 1)
  Tensor gamma;  // (L)
  Tensor beta;   // (L)

  static FecamParams init(std::size_t length, std::size_t d_int, Rng& rng) {
    if (d_int < 1) throw std::invalid_argument("FecamParams: d_int must be >= 1");
    const double s1 = 1.0 / std::sqrt(static_cast<double>(length));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(d_int));
    FecamParams p;
    p.w1 = Tensor::uniform({length, d_int}, rng, -s1, s1);
    p.w2 = Tensor::uniform({d_int, 1}, rng, -s2, s2);
    p.gamma = Tensor::full({length}, 1.0);
    p.beta = Tensor::zeros({length});
    return p;
  }

  std::vector<std::pair<std::string, Tensor*>> parameters(const std::string& prefix) {
    return {{prefix + ".w1", &w1},
            {prefix + ".w2", &w2},
            {prefix + ".gamma", &gamma},
            {prefix + ".beta", &beta}};
  }
};

/// Frequency coefficients of one channel: Freq(l) = sum_m v(m) basis(l, m).
inline Tensor dct_channel(const Tensor& v, const DctBasis& basis) {
  if (v.rank() != 2 || v.shape()[0] != 1 || v.shape()[1] != basis.length)
    throw std::invalid_argument(detail::str(
        "dct_channel: expected shape (1,", basis.length, "), got ",
        detail::shape_str(v.shape())));
  return matmul(v, transpose_last(basis.matrix));
}

/// DCT applied independently per (batch, channel) along the last axis.
inline Tensor dct_stack(const Tensor& x, const DctBasis& basis) {
  if (x.rank() != 3 || x.shape()[2] != basis.length)
    throw std::invalid_argument(detail::str(
        "dct_stack: expected last axis ", basis.length, ", got ",
        detail::shape_str(x.shape())));
  return matmul(x, transpose_last(basis.matrix));
}

/// Two-layer squeeze gate sig(relu(Freq W1) W2) in (0,1), one per channel.
inline Tensor channel_gate(const Tensor& freq, const FecamParams& params) {
  if (freq.rank() != 3 || freq.shape()[2] != params.w1.shape()[0])
    throw std::invalid_argument(detail::str(
        "channel_gate: frequency width ", detail::shape_str(freq.shape()),
        " does not match W1 ", detail::shape_str(params.w1.shape())));
  return sigmoid(matmul(relu(matmul(freq, params.w1)), params.w2));  // (B, C, 1)
}

/// Rescale, residual-add and normalize: LayerNorm(x + x * gate) along the
/// last axis. Exposed separately so a gate can be injected in tests.
inline Tensor fecam_rescale_norm(const Tensor& x, const Tensor& gate,
                                 const Tensor& gamma, const Tensor& beta) {
  Tensor scaled = mul(x, repeat_axis(gate, 2, x.shape()[2]));
  return layer_norm(add(x, scaled), gamma, beta, 2, 1e-5);
}

/// Full frequency-enhanced channel attention over (B, C, L).
inline Tensor fecam_apply(const Tensor& x, const FecamParams& params,
                          const DctBasis& basis) {
  Tensor gate = channel_gate(dct_stack(x, basis), params);
  return fecam_rescale_norm(x, gate, params.gamma, params.beta);
}

}  // namespace powerformer

#endif  // POWERFORMER_FECAM_HPP
