#ifndef POWERFORMER_MODEL_HPP
#define POWERFORMER_MODEL_HPP

#include <fstream>
#include <optional>
#include <tuple>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "powerformer/attention.hpp"
#include "powerformer/data.hpp"
#include "powerformer/fecam.hpp"
#include "powerformer/lstm.hpp"
#include "powerformer/revnet.hpp"
#include "powerformer/variate.hpp"

namespace powerformer {

enum class TransposeSource { kLstmOutput, kRawInput };
enum class FecamPosition { kPostEncoder, kPreEncoder };
enum class BackpropMode { kReconstruct, kStored };

/// Every structural hyperparameter and ablation toggle in one record.
/// n_channels comes from the prepared dataset.
struct ModelConfig {
  std::size_t seq_len = 288;
  std::size_t pred_len = 288;
  std::size_t n_channels = 0;
  std::size_t d_model = 128;
  std::size_t d_h = 32;
  std::size_t n_layers = 2;
  std::size_t n_buckets = 4;
  std::size_t lsh_rounds = 4;
  std::size_t d_int = 0;  // 0 resolves to max(8, d_model / 4)
  std::size_t chunk = 32;
  bool use_transpose = true;
  bool use_fecam = true;
  bool use_lstm = true;
  AttentionKind attention = AttentionKind::kLsh;
  TransposeSource transpose_source = TransposeSource::kLstmOutput;
  FecamPosition fecam_position = FecamPosition::kPostEncoder;
  std::uint64_t seed = 42;

  std::size_t resolved_d_int() const {
    return d_int > 0 ? d_int : std::max<std::size_t>(8, d_model / 4);
  }

  /// Channel-token count when the transposition path is active.
  std::size_t token_count() const {
    if (!use_transpose) return seq_len;
    return transpose_source == TransposeSource::kRawInput ? n_channels : d_h;
  }

  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
      throw std::invalid_argument("ModelConfig." + field + ": " + why);
    };
    if (seq_len < 1) fail("seq_len", "must be >= 1");
    if (pred_len < 1) fail("pred_len", "must be >= 1");
    if (n_channels < 1) fail("n_channels", "must be >= 1 (set from the dataset)");
    if (d_model < 2 || d_model % 2 != 0)
      fail("d_model", "must be even and >= 2 for the reversible split");
    if (d_h < 1) fail("d_h", "must be >= 1");
    if (n_layers < 1) fail("n_layers", "must be >= 1");
    if (lsh_rounds < 1) fail("lsh_rounds", "must be >= 1");
    if (n_buckets != 1 && (n_buckets < 2 || n_buckets % 2 != 0))
      fail("n_buckets", "must be 1 (degenerate) or even and >= 2");
    if (chunk < 1) fail("chunk", "must be >= 1");
    if (use_transpose && transpose_source == TransposeSource::kLstmOutput &&
        d_h > seq_len)
      fail("d_h", detail::str("channel tokens (", d_h,
                              ") cannot exceed seq_len (", seq_len, ")"));
    if (use_transpose && transpose_source == TransposeSource::kRawInput &&
        n_channels > seq_len)
      fail("n_channels", detail::str("channel tokens (", n_channels,
                                     ") cannot exceed seq_len (", seq_len, ")"));
    if (fecam_position == FecamPosition::kPreEncoder && !use_transpose)
      fail("fecam_position", "pre_encoder requires use_transpose (trajectory tokens)");
  }
};

/// Normalized-space forecast plus an MW view through the fitted normalizer.
struct ForecastOutput {
  Tensor y_hat;  // (B, P)

  Tensor denormalized(const Normalizer& norm) const {
    Tensor out = y_hat.clone();
    for (std::size_t i = 0; i < out.size(); ++i)
      out.data()[i] = norm.denormalize_target(out.data()[i]);
    return out;
  }
};

namespace detail {

inline Tensor sinusoidal_encoding(std::size_t length, std::size_t width) {
  Tensor pe = Tensor::zeros({length, width});
  for (std::size_t t = 0; t < length; ++t)
    for (std::size_t i = 0; i < width; ++i) {
      const double exponent =
          static_cast<double>(2 * (i / 2)) / static_cast<double>(width);
      const double angle = static_cast<double>(t) / std::pow(10000.0, exponent);
      pe.data()[t * width + i] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

}  // namespace detail

/// The assembled forecaster. Flag-driven structure:
///   use_lstm      on: gated recurrent embedding; off: position-wise affine
///   use_transpose on: channel-trajectory tokens; off: time tokens with a
///                     sinusoidal positional encoding
///   use_fecam     on: frequency gate on the encoder output; off: identity
/// The encoder is always the reversible LSH/dense attention stack.
class Model {
 public:
  explicit Model(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    Rng rng(config_.seed);
    const std::size_t v = config_.n_channels;
    const std::size_t dm = config_.d_model;
    const std::size_t tokens = config_.token_count();

    if (config_.use_lstm) lstm_ = LstmParams::init(v, config_.d_h, rng);

    if (config_.use_transpose) {
      if (!config_.use_lstm &&
          config_.transpose_source == TransposeSource::kLstmOutput) {
        const double s = 1.0 / std::sqrt(static_cast<double>(v));
        value_embed_w_ = Tensor::uniform({v, config_.d_h}, rng, -s, s);
        value_embed_b_ = Tensor::zeros({config_.d_h});
      }
      const double st = 1.0 / std::sqrt(static_cast<double>(config_.seq_len));
      tokenizer_w_ = Tensor::uniform({config_.seq_len, dm}, rng, -st, st);
      tokenizer_b_ = Tensor::zeros({dm});
      if (config_.fecam_position == FecamPosition::kPreEncoder && config_.use_fecam) {
        pre_fecam_ = FecamParams::init(config_.seq_len, config_.resolved_d_int(), rng);
        pre_basis_ = DctBasis::make(config_.seq_len);
      }
    } else {
      if (config_.use_lstm) {
        const double s = 1.0 / std::sqrt(static_cast<double>(config_.d_h));
        project_w_ = Tensor::uniform({config_.d_h, dm}, rng, -s, s);
        project_b_ = Tensor::zeros({dm});
      } else {
        const double s = 1.0 / std::sqrt(static_cast<double>(v));
        value_embed_w_ = Tensor::uniform({v, dm}, rng, -s, s);
        value_embed_b_ = Tensor::zeros({dm});
      }
      positional_ = detail::sinusoidal_encoding(config_.seq_len, dm);
    }

    AttentionSettings attn;
    attn.kind = config_.attention;
    attn.n_buckets = config_.n_buckets;
    attn.n_rounds = config_.lsh_rounds;
    attn.seed = config_.seed * 7919 + 1;
    encoder_ = ReversibleEncoder(dm, config_.n_layers, 2 * dm, config_.chunk, attn, rng);

    if (config_.use_fecam && config_.fecam_position == FecamPosition::kPostEncoder) {
      post_fecam_ = FecamParams::init(dm, config_.resolved_d_int(), rng);
      post_basis_ = DctBasis::make(dm);
    }

    const double sh = 1.0 / std::sqrt(static_cast<double>(dm));
    head_w_ = Tensor::uniform({dm, config_.pred_len}, rng, -sh, sh);
    head_b_ = Tensor::zeros({config_.pred_len});
    const double sc = 1.0 / std::sqrt(static_cast<double>(tokens));
    combine_w_ = Tensor::uniform({tokens, 1}, rng, -sc, sc);
    combine_b_ = Tensor::zeros({1});
  }

  const ModelConfig& config() const { return config_; }

  /// Embedding stage: raw standardized input (B, T, V) to encoder tokens
  /// (B, C, d_model).
  Tensor embed(const Tensor& x) const {
    if (x.rank() != 3 || x.shape()[1] != config_.seq_len ||
        x.shape()[2] != config_.n_channels)
      throw std::invalid_argument(detail::str(
          "Model: input must be (B,", config_.seq_len, ",", config_.n_channels,
          "), got ", detail::shape_str(x.shape())));

    if (config_.use_transpose) {
      Tensor trajectories;  // (B, C, T)
      if (config_.transpose_source == TransposeSource::kRawInput) {
        trajectories = transpose_input(x);
      } else if (config_.use_lstm) {
        trajectories = transpose_input(lstm_sequence(x, *lstm_));
      } else {
        trajectories = transpose_input(add(matmul(x, value_embed_w_), value_embed_b_));
      }
      if (pre_fecam_)
        trajectories = fecam_apply(trajectories, *pre_fecam_, pre_basis_);
      return tokenize_trajectories(trajectories, tokenizer_w_, tokenizer_b_).tokens;
    }

    Tensor embedded = config_.use_lstm
                          ? embed_project(lstm_sequence(x, *lstm_), project_w_, project_b_)
                          : add(matmul(x, value_embed_w_), value_embed_b_);
    return add(embedded, positional_);
  }

  /// Encoder output to forecast: optional frequency gate, per-token horizon
  /// projection, learned channel combination.
  Tensor head(const Tensor& z) const {
    Tensor gated = z;
    if (post_fecam_) gated = fecam_apply(z, *post_fecam_, post_basis_);
    Tensor per_token = add(matmul(gated, head_w_), head_b_);      // (B, C, P)
    Tensor across = transpose_axes(per_token, {0, 2, 1});         // (B, P, C)
    Tensor combined = add(matmul(across, combine_w_), combine_b_);  // (B, P, 1)
    return reshape(combined, {z.shape()[0], config_.pred_len});
  }

  Tensor encode(const Tensor& tokens) const { return encoder_.forward(tokens); }

  ForecastOutput forward(const Tensor& x) const {
    return ForecastOutput{head(encode(embed(x)))};
  }

  std::vector<std::pair<std::string, Tensor*>> parameters() {
    std::vector<std::pair<std::string, Tensor*>> params;
    auto push = [&](const std::string& name, Tensor* t) { params.emplace_back(name, t); };
    if (lstm_)
      for (auto& entry : lstm_->parameters("lstm")) params.push_back(entry);
    if (value_embed_w_.rank() > 0) {
      push("value_embed.w", &value_embed_w_);
      push("value_embed.b", &value_embed_b_);
    }
    if (project_w_.rank() > 0) {
      push("project.w", &project_w_);
      push("project.b", &project_b_);
    }
    if (tokenizer_w_.rank() > 0) {
      push("tokenizer.w", &tokenizer_w_);
      push("tokenizer.b", &tokenizer_b_);
    }
    if (pre_fecam_)
      for (auto& entry : pre_fecam_->parameters("fecam_pre")) params.push_back(entry);
    for (auto& entry : encoder_.parameters("encoder")) params.push_back(entry);
    if (post_fecam_)
      for (auto& entry : post_fecam_->parameters("fecam")) params.push_back(entry);
    push("head.w", &head_w_);
    push("head.b", &head_b_);
    push("combine.w", &combine_w_);
    push("combine.b", &combine_b_);
    return params;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& [name, t] : parameters()) n += t->size();
    return n;
  }

  /// FNV-1a over the raw parameter bytes in declaration order.
  std::uint64_t parameter_checksum() {
    std::uint64_t hash = 1469598103934665603ull;
    for (auto& [name, t] : parameters()) {
      const unsigned char* bytes = reinterpret_cast<const unsigned char*>(t->data());
      for (std::size_t i = 0; i < t->size() * sizeof(double); ++i) {
        hash ^= bytes[i];
        hash *= 1099511628211ull;
      }
    }
    return hash;
  }

  /// Mean-squared-error loss and parameter gradients for one batch.
  /// kStored records the whole forward pass on one tape; kReconstruct keeps
  /// only the encoder output alive and rebuilds block inputs during the
  /// backward sweep.
  struct LossGrads {
    double loss = 0.0;
    std::vector<Tensor> grads;  // aligned with parameters()
  };

  LossGrads loss_and_gradients(const Tensor& x, const Tensor& y, BackpropMode mode) {
    auto params = parameters();
    LossGrads out;
    out.grads.reserve(params.size());

    if (mode == BackpropMode::kStored) {
      Tape tape;
      for (auto& [name, p] : params) tape.watch(*p);
      Tensor diff = sub(head(encode(embed(x))), y);
      Tensor loss = mean(mul(diff, diff));
      Gradients grads = tape.backward(loss);
      out.loss = loss.data()[0];
      for (auto& [name, p] : params) out.grads.push_back(grads.wrt(*p));
      return out;
    }

    // Reconstruction mode. Stage 1: embedding under its own tape.
    Tape pre_tape;
    for (auto& [name, p] : params) pre_tape.watch(*p);
    Tensor tokens = embed(x);

    // Stage 2: encoder without activation storage.
    Tensor encoded;
    {
      Tape::Pause pause;
      encoded = encoder_.forward(tokens.detached());
    }

    // Stage 3: head and loss under a short-lived tape.
    Gradients post_grads;
    Tensor encoded_leaf = encoded.detached();
    {
      Tape post_tape;
      post_tape.watch(encoded_leaf);
      for (auto& [name, p] : params) post_tape.watch(*p);
      Tensor diff = sub(head(encoded_leaf), y);
      Tensor loss = mean(mul(diff, diff));
      post_grads = post_tape.backward(loss);
      out.loss = loss.data()[0];
    }

    // Stage 4: block-by-block reconstruction sweep.
    GradAccumulator sink;
    Tensor grad_tokens =
        encoder_.backward_reconstruct(encoded, post_grads.wrt(encoded_leaf), sink);

    // Stage 5: back into the embedding tape.
    Gradients pre_grads = pre_tape.vjp({{tokens, grad_tokens}});

    for (auto& [name, p] : params) {
      if (sink.has(*p)) {
        out.grads.push_back(sink.get(*p));
        continue;
      }
      Tensor total = Tensor::zeros(p->shape());
      const Tensor from_post = post_grads.wrt(*p);
      const Tensor from_pre = pre_grads.wrt(*p);
      for (std::size_t i = 0; i < total.size(); ++i)
        total.data()[i] = from_post.data()[i] + from_pre.data()[i];
      out.grads.push_back(total);
    }
    return out;
  }

  // -- checkpointing ---------------------------------------------------------

  void save_checkpoint(const std::string& path, const Normalizer& norm,
                       const std::vector<std::string>& channel_names,
                       const nlohmann::json& extra = nlohmann::json::object()) {
    nlohmann::json j;
    j["format"] = "powerformer-checkpoint";
    j["version"] = 1;
    j["config"] = config_to_json(config_);
    j["extra"] = extra;
    j["normalizer"] = {{"means", norm.means()},
                       {"stds", norm.stds()},
                       {"target_mean", norm.target_mean()},
                       {"target_std", norm.target_std()},
                       {"channel_names", channel_names}};
    nlohmann::json params = nlohmann::json::array();
    for (auto& [name, t] : parameters()) {
      nlohmann::json p;
      p["name"] = name;
      p["shape"] = t->shape();
      p["data"] = std::vector<double>(t->data(), t->data() + t->size());
      params.push_back(std::move(p));
    }
    j["params"] = std::move(params);
    std::ofstream file(path);
    if (!file) throw std::runtime_error("save_checkpoint: cannot open " + path);
    file << j.dump(1) << "\n";
  }

  static nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"seq_len", c.seq_len},
            {"pred_len", c.pred_len},
            {"n_channels", c.n_channels},
            {"d_model", c.d_model},
            {"d_h", c.d_h},
            {"n_layers", c.n_layers},
            {"n_buckets", c.n_buckets},
            {"lsh_rounds", c.lsh_rounds},
            {"d_int", c.d_int},
            {"chunk", c.chunk},
            {"use_transpose", c.use_transpose},
            {"use_fecam", c.use_fecam},
            {"use_lstm", c.use_lstm},
            {"attention", c.attention == AttentionKind::kLsh ? "lsh" : "dense"},
            {"transpose_source",
             c.transpose_source == TransposeSource::kRawInput ? "raw_input" : "lstm_output"},
            {"fecam_position",
             c.fecam_position == FecamPosition::kPreEncoder ? "pre_encoder" : "post_encoder"},
            {"seed", c.seed}};
  }

  static ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.seq_len = j.value("seq_len", c.seq_len);
    c.pred_len = j.value("pred_len", c.pred_len);
    c.n_channels = j.value("n_channels", c.n_channels);
    c.d_model = j.value("d_model", c.d_model);
    c.d_h = j.value("d_h", c.d_h);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_buckets = j.value("n_buckets", c.n_buckets);
    c.lsh_rounds = j.value("lsh_rounds", c.lsh_rounds);
    c.d_int = j.value("d_int", c.d_int);
    c.chunk = j.value("chunk", c.chunk);
    c.use_transpose = j.value("use_transpose", c.use_transpose);
    c.use_fecam = j.value("use_fecam", c.use_fecam);
    c.use_lstm = j.value("use_lstm", c.use_lstm);
    const std::string attn = j.value("attention", "lsh");
    if (attn == "lsh") {
      c.attention = AttentionKind::kLsh;
    } else if (attn == "dense") {
      c.attention = AttentionKind::kDense;
    } else {
      throw std::invalid_argument("ModelConfig.attention: must be \"lsh\" or \"dense\"");
    }
    const std::string src = j.value("transpose_source", "lstm_output");
    if (src == "lstm_output") {
      c.transpose_source = TransposeSource::kLstmOutput;
    } else if (src == "raw_input") {
      c.transpose_source = TransposeSource::kRawInput;
    } else {
      throw std::invalid_argument(
          "ModelConfig.transpose_source: must be \"lstm_output\" or \"raw_input\"");
    }
    const std::string fp = j.value("fecam_position", "post_encoder");
    if (fp == "post_encoder") {
      c.fecam_position = FecamPosition::kPostEncoder;
    } else if (fp == "pre_encoder") {
      c.fecam_position = FecamPosition::kPreEncoder;
    } else {
      throw std::invalid_argument(
          "ModelConfig.fecam_position: must be \"post_encoder\" or \"pre_encoder\"");
    }
    c.seed = j.value("seed", c.seed);
    return c;
  }

 private:
  ModelConfig config_;
  std::optional<LstmParams> lstm_;
  Tensor value_embed_w_, value_embed_b_;  // size-1 scalars when unused
  Tensor project_w_, project_b_;
  Tensor tokenizer_w_, tokenizer_b_;
  Tensor positional_;
  std::optional<FecamParams> pre_fecam_;
  DctBasis pre_basis_;
  ReversibleEncoder encoder_;
  std::optional<FecamParams> post_fecam_;
  DctBasis post_basis_;
  Tensor head_w_, head_b_, combine_w_, combine_b_;
};

/// A checkpointed model with the normalizer and channel layout it was
/// trained against.
struct LoadedModel {
  Model model;
  Normalizer normalizer;
  std::vector<std::string> channel_names;
  nlohmann::json extra;
};

inline LoadedModel load_checkpoint(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw std::runtime_error("load_checkpoint: cannot open " + path);
  nlohmann::json j;
  file >> j;
  if (j.value("format", "") != "powerformer-checkpoint")
    throw std::runtime_error("load_checkpoint: not a checkpoint file: " + path);
  if (j.value("version", 0) != 1)
    throw std::runtime_error("load_checkpoint: unsupported version");

  Model model(Model::config_from_json(j.at("config")));
  auto params = model.parameters();
  const auto& stored = j.at("params");
  if (stored.size() != params.size())
    throw std::runtime_error(detail::str("load_checkpoint: expected ", params.size(),
                                         " parameter tensors, found ", stored.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = stored[i];
    if (entry.at("name") != params[i].first)
      throw std::runtime_error(detail::str(
          "load_checkpoint: parameter ", i, " is \"", std::string(entry.at("name")),
          "\", expected \"", params[i].first, "\""));
    const std::vector<std::size_t> shape = entry.at("shape");
    if (shape != params[i].second->shape())
      throw std::runtime_error("load_checkpoint: shape mismatch for " + params[i].first);
    const std::vector<double> data = entry.at("data");
    std::copy(data.begin(), data.end(), params[i].second->data());
  }

  Normalizer norm;
  const auto& n = j.at("normalizer");
  norm.restore(n.at("means").get<std::vector<double>>(),
               n.at("stds").get<std::vector<double>>(), n.at("target_mean"),
               n.at("target_std"));
  return LoadedModel{std::move(model), std::move(norm),
                     n.at("channel_names").get<std::vector<std::string>>(),
                     j.value("extra", nlohmann::json::object())};
}

/// The five ablation rows: flag triples (transpose, fecam, lstm) =
/// I (0,0,0), II (1,1,0), III (1,0,1), IV (0,1,1), V (1,1,1).
struct AblationRow {
  std::string label;
  ModelConfig config;
};

inline std::vector<AblationRow> ablation_grid(const ModelConfig& base) {
  base.validate();
  const std::vector<std::tuple<std::string, bool, bool, bool>> rows = {
      {"I", false, false, false},
      {"II", true, true, false},
      {"III", true, false, true},
      {"IV", false, true, true},
      {"V", true, true, true}};
  std::vector<AblationRow> out;
  for (const auto& [label, transpose, fecam, lstm] : rows) {
    ModelConfig c = base;
    c.use_transpose = transpose;
    c.use_fecam = fecam;
    c.use_lstm = lstm;
    c.validate();
    out.push_back(AblationRow{label, c});
  }
  return out;
}

}  // namespace powerformer

#endif  // POWERFORMER_MODEL_HPP
