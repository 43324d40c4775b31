#ifndef POWERFORMER_VARIATE_HPP
#define POWERFORMER_VARIATE_HPP

#include <functional>

#include "powerformer/tensor.hpp"

namespace powerformer {

/// One attention token per channel, each summarizing that channel's whole
/// length-T trajectory. Token order matches channel order.
struct VariateTokens {
  Tensor tokens;               // (B, C, d_model)
  std::size_t source_len = 0;  // trajectory length T the tokens were built from

  std::size_t channel_count() const { return tokens.shape()[1]; }
};

/// Swap time and channel axes: (B, T, C) -> (B, C, T). Values preserved.
inline Tensor transpose_input(const Tensor& x) {
  if (x.rank() != 3)
    throw std::invalid_argument(detail::str(
        "transpose_input: expected rank-3 (B,T,C), got ",
        detail::shape_str(x.shape())));
  return transpose_axes(x, {0, 2, 1});
}

/// Project each channel's length-T trajectory into one d_model token.
inline VariateTokens tokenize_trajectories(const Tensor& x, const Tensor& w,
                                           const Tensor& b) {
  if (x.rank() != 3)
    throw std::invalid_argument("tokenize_trajectories: expected rank-3 (B,C,T)");
  if (w.rank() != 2 || x.shape()[2] != w.shape()[0])
    throw std::invalid_argument(detail::str(
        "tokenize_trajectories: trajectory length ", x.shape()[2],
        " does not match projection ", detail::shape_str(w.shape())));
  if (b.rank() != 1 || b.shape()[0] != w.shape()[1])
    throw std::invalid_argument("tokenize_trajectories: bias width mismatch");
  const std::size_t channels = x.shape()[1];
  const std::size_t source_len = x.shape()[2];
  if (channels > source_len)
    throw std::invalid_argument(detail::str(
        "tokenize_trajectories: channel tokens (", channels,
        ") must not exceed trajectory length (", source_len, ")"));
  return VariateTokens{add(matmul(x, w), b), source_len};
}

/// Run an attention function across the channel-token axis; the token count
/// seen by attention is C, not T.
inline VariateTokens cross_variable_attention(
    const VariateTokens& tokens,
    const std::function<Tensor(const Tensor&, const Tensor&, const Tensor&)>& attention) {
  Tensor out = attention(tokens.tokens, tokens.tokens, tokens.tokens);
  if (out.shape() != tokens.tokens.shape())
    throw std::invalid_argument("cross_variable_attention: attention must preserve shape");
  return VariateTokens{out, tokens.source_len};
}

}  // namespace powerformer

#endif  // POWERFORMER_VARIATE_HPP
