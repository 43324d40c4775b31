#ifndef POWERFORMER_REVNET_HPP
#define POWERFORMER_REVNET_HPP

#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "powerformer/attention.hpp"
#include "powerformer/tensor.hpp"

namespace powerformer {

/// Two-stream hidden state of a reversible block; each half carries
/// d_model/2 features and the full state is concat(x1, x2).
struct RevBlockState {
  Tensor x1, x2;
};

using SubFn = std::function<Tensor(const Tensor&)>;

/// y1 = x1 + attn(x2); y2 = x2 + ffn(y1). Sub-functions must preserve shape.
inline RevBlockState rev_forward(const RevBlockState& state, const SubFn& attn,
                                 const SubFn& ffn) {
  if (state.x1.shape() != state.x2.shape())
    throw std::invalid_argument(detail::str(
        "rev_forward: halves differ: ", detail::shape_str(state.x1.shape()), " vs ",
        detail::shape_str(state.x2.shape())));
  Tensor y1 = add(state.x1, attn(state.x2));
  Tensor y2 = add(state.x2, ffn(y1));
  return RevBlockState{y1, y2};
}

/// Exact algebraic inverse: x2 = y2 - ffn(y1); x1 = y1 - attn(x2).
inline RevBlockState rev_inverse(const RevBlockState& output, const SubFn& attn,
                                 const SubFn& ffn) {
  if (output.x1.shape() != output.x2.shape())
    throw std::invalid_argument(detail::str(
        "rev_inverse: halves differ: ", detail::shape_str(output.x1.shape()), " vs ",
        detail::shape_str(output.x2.shape())));
  Tensor x2 = sub(output.x2, ffn(output.x1));
  Tensor x1 = sub(output.x1, attn(x2));
  return RevBlockState{x1, x2};
}

/// Position-wise two-layer network evaluated in token-axis chunks. The result
/// is bit-identical for every chunk size because positions are independent.
inline Tensor chunked_ffn(const Tensor& x, std::size_t chunk, const Tensor& w1,
                          const Tensor& b1, const Tensor& w2, const Tensor& b2) {
  if (x.rank() != 3)
    throw std::invalid_argument("chunked_ffn: input must have shape (B, N, d)");
  const std::size_t tokens = x.shape()[1];
  if (chunk < 1 || chunk > tokens)
    throw std::invalid_argument(detail::str("chunked_ffn: chunk ", chunk,
                                            " out of range [1, ", tokens, "]"));
  std::vector<Tensor> pieces;
  pieces.reserve((tokens + chunk - 1) / chunk);
  for (std::size_t start = 0; start < tokens; start += chunk) {
    const std::size_t len = std::min(chunk, tokens - start);
    Tensor part = slice(x, 1, start, len);
    pieces.push_back(add(matmul(relu(add(matmul(part, w1), b1)), w2), b2));
  }
  if (pieces.size() == 1) return pieces[0];
  return concat(pieces, 1);
}

/// Parameter gradients keyed by the parameter's buffer, accumulated across
/// the per-block replays of a reconstruction-based backward sweep.
class GradAccumulator {
 public:
  void add(const Tensor& param, const Tensor& grad) {
    auto it = grads_.find(param.data());
    if (it == grads_.end()) {
      grads_.emplace(param.data(), grad.clone());
      return;
    }
    Tensor& dst = it->second;
    for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += grad.data()[i];
  }

  bool has(const Tensor& param) const { return grads_.count(param.data()) > 0; }

  Tensor get(const Tensor& param) const {
    auto it = grads_.find(param.data());
    if (it == grads_.end()) return Tensor::zeros(param.shape());
    return it->second;
  }

 private:
  std::unordered_map<const double*, Tensor> grads_;
};

enum class AttentionKind { kDense, kLsh };

struct AttentionSettings {
  AttentionKind kind = AttentionKind::kLsh;
  std::size_t n_buckets = 4;
  std::size_t n_rounds = 4;
  std::uint64_t seed = 0;
};

/// One reversible Reformer block: pre-norm shared-QK attention on one stream,
/// pre-norm chunked feed-forward on the other. Operates on halves of width
/// d_model/2; d_ff defaults to 4x that width.
class RevBlock {
 public:
  RevBlock(std::size_t width, std::size_t d_ff, std::size_t chunk,
           AttentionSettings attn, Rng& rng)
      : width_(width), d_ff_(d_ff), chunk_(chunk), attn_(attn) {
    const double s = 1.0 / std::sqrt(static_cast<double>(width));
    ln1_gamma_ = Tensor::full({width}, 1.0);
    ln1_beta_ = Tensor::zeros({width});
    w_qk_ = Tensor::uniform({width, width}, rng, -s, s);
    w_v_ = Tensor::uniform({width, width}, rng, -s, s);
    w_o_ = Tensor::uniform({width, width}, rng, -s, s);
    ln2_gamma_ = Tensor::full({width}, 1.0);
    ln2_beta_ = Tensor::zeros({width});
    w1_ = Tensor::uniform({width, d_ff}, rng, -s, s);
    b1_ = Tensor::zeros({d_ff});
    const double s2 = 1.0 / std::sqrt(static_cast<double>(d_ff));
    w2_ = Tensor::uniform({d_ff, width}, rng, -s2, s2);
    b2_ = Tensor::zeros({width});
  }

  Tensor attn_fn(const Tensor& x) const {
    Tensor u = layer_norm(x, ln1_gamma_, ln1_beta_, x.rank() - 1, 1e-5);
    Tensor qk = matmul(u, w_qk_);
    Tensor v = matmul(u, w_v_);
    Tensor o = attn_.kind == AttentionKind::kDense
                   ? dense_attention(qk, qk, v)
                   : lsh_attention(qk, qk, v, attn_.n_buckets, attn_.n_rounds,
                                   attn_.seed);
    return matmul(o, w_o_);
  }

  Tensor ffn_fn(const Tensor& x) const {
    Tensor u = layer_norm(x, ln2_gamma_, ln2_beta_, x.rank() - 1, 1e-5);
    const std::size_t tokens = u.shape()[1];
    return chunked_ffn(u, std::min(chunk_, tokens), w1_, b1_, w2_, b2_);
  }

  RevBlockState forward(const RevBlockState& state) const {
    return rev_forward(state, [this](const Tensor& t) { return attn_fn(t); },
                       [this](const Tensor& t) { return ffn_fn(t); });
  }

  RevBlockState inverse(const RevBlockState& output) const {
    return rev_inverse(output, [this](const Tensor& t) { return attn_fn(t); },
                       [this](const Tensor& t) { return ffn_fn(t); });
  }

  std::vector<std::pair<std::string, Tensor*>> parameters(const std::string& prefix) {
    return {{prefix + ".ln1.gamma", &ln1_gamma_}, {prefix + ".ln1.beta", &ln1_beta_},
            {prefix + ".w_qk", &w_qk_},           {prefix + ".w_v", &w_v_},
            {prefix + ".w_o", &w_o_},             {prefix + ".ln2.gamma", &ln2_gamma_},
            {prefix + ".ln2.beta", &ln2_beta_},   {prefix + ".ffn.w1", &w1_},
            {prefix + ".ffn.b1", &b1_},           {prefix + ".ffn.w2", &w2_},
            {prefix + ".ffn.b2", &b2_}};
  }

  std::size_t width() const { return width_; }

 private:
  std::size_t width_, d_ff_, chunk_;
  AttentionSettings attn_;
  Tensor ln1_gamma_, ln1_beta_, w_qk_, w_v_, w_o_;
  Tensor ln2_gamma_, ln2_beta_, w1_, b1_, w2_, b2_;
};

/// Stack of reversible blocks over (B, tokens, d_model). The hidden state is
/// split feature-wise into two d_model/2 streams at entry and rejoined at
/// exit. Supports stored-activation backprop (record everything on the active
/// tape) and reconstruction-based backprop (inputs recovered block by block,
/// each block replayed under a short-lived local tape).
class ReversibleEncoder {
 public:
  ReversibleEncoder() = default;

  ReversibleEncoder(std::size_t d_model, std::size_t n_layers, std::size_t d_ff,
                    std::size_t chunk, AttentionSettings attn, Rng& rng)
      : d_model_(d_model) {
    if (d_model % 2 != 0)
      throw std::invalid_argument(detail::str(
          "ReversibleEncoder: d_model must be even for the two-stream split, got ",
          d_model));
    for (std::size_t layer = 0; layer < n_layers; ++layer) {
      AttentionSettings layer_attn = attn;
      layer_attn.seed = attn.seed + layer;  // decorrelate hash rounds per layer
      blocks_.emplace_back(d_model / 2, d_ff, chunk, layer_attn, rng);
    }
  }

  RevBlockState split(const Tensor& x) const {
    const std::size_t half = d_model_ / 2;
    return RevBlockState{slice(x, x.rank() - 1, 0, half),
                         slice(x, x.rank() - 1, half, half)};
  }

  Tensor join(const RevBlockState& state) const {
    return concat({state.x1, state.x2}, state.x1.rank() - 1);
  }

  Tensor forward(const Tensor& x) const {
    RevBlockState state = split(x);
    for (const RevBlock& block : blocks_) state = block.forward(state);
    return join(state);
  }

  /// Reconstruction-based backward: given the (detached) stack output and its
  /// cotangent, recover each block's input via the inverse equations, replay
  /// the block under a local tape, and chain the cotangent. Parameter
  /// gradients land in `sink`; the return value is d(loss)/d(stack input).
  Tensor backward_reconstruct(const Tensor& output, const Tensor& grad_output,
                              GradAccumulator& sink) {
    RevBlockState state{split(output).x1.detached(), split(output).x2.detached()};
    Tensor g1 = split(grad_output).x1.detached();
    Tensor g2 = split(grad_output).x2.detached();
    for (std::size_t idx = blocks_.size(); idx-- > 0;) {
      RevBlock& block = blocks_[idx];
      RevBlockState input;
      {
        Tape::Pause pause;  // reconstruction math is not recorded
        input = block.inverse(state);
        input.x1 = input.x1.detached();
        input.x2 = input.x2.detached();
      }
      Tape tape;
      tape.watch(input.x1);
      tape.watch(input.x2);
      for (auto& [name, param] : block.parameters("b")) tape.watch(*param);
      RevBlockState replay = block.forward(input);
      Gradients grads = tape.vjp({{replay.x1, g1}, {replay.x2, g2}});
      g1 = grads.wrt(input.x1);
      g2 = grads.wrt(input.x2);
      for (auto& [name, param] : block.parameters("b"))
        sink.add(*param, grads.wrt(*param));
      state = input;
    }
    return concat({g1, g2}, g1.rank() - 1);
  }

  std::vector<std::pair<std::string, Tensor*>> parameters(const std::string& prefix) {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      for (auto& entry : blocks_[i].parameters(prefix + ".block" + std::to_string(i)))
        out.push_back(entry);
    return out;
  }

  std::size_t n_layers() const { return blocks_.size(); }
  std::size_t d_model() const { return d_model_; }
  const std::vector<RevBlock>& blocks() const { return blocks_; }
  std::vector<RevBlock>& blocks() { return blocks_; }

 private:
  std::size_t d_model_ = 0;
  std::vector<RevBlock> blocks_;
};

}  // namespace powerformer

#endif  // POWERFORMER_REVNET_HPP
