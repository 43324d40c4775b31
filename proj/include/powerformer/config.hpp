#ifndef POWERFORMER_CONFIG_HPP
#define POWERFORMER_CONFIG_HPP

#include <fstream>
#include <initializer_list>
#include <string>

#include <json.hpp>

#include "powerformer/data.hpp"
#include "powerformer/model.hpp"
#include "powerformer/train.hpp"

namespace powerformer {

/// Full run configuration: model structure, training options, data options.
/// Loaded from a JSON file with three sections; every field has a documented
/// default, so an empty object is a valid config.
struct RunConfig {
  ModelConfig model;
  TrainOptions train;
  DatasetOptions data;  // input_len / pred_len mirror the model fields
};

namespace detail {

inline void check_known_keys(const nlohmann::json& j, const std::string& section,
                             std::initializer_list<const char*> known) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok)
      throw std::invalid_argument(detail::str("config: unknown key \"", section, ".",
                                              key, "\""));
  }
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  detail::check_known_keys(j, "", {"model", "train", "data"});
  RunConfig rc;

  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::check_known_keys(
        m, "model",
        {"seq_len", "pred_len", "n_channels", "d_model", "d_h", "n_layers",
         "n_buckets", "lsh_rounds", "d_int", "chunk", "use_transpose", "use_fecam",
         "use_lstm", "attention", "transpose_source", "fecam_position", "seed"});
    rc.model = Model::config_from_json(m);
  }

  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::check_known_keys(t, "train",
                             {"epochs", "learning_rate", "patience", "backprop",
                              "shuffle", "shuffle_seed"});
    rc.train.epochs = t.value("epochs", rc.train.epochs);
    rc.train.learning_rate = t.value("learning_rate", rc.train.learning_rate);
    rc.train.patience = t.value("patience", rc.train.patience);
    rc.train.shuffle = t.value("shuffle", rc.train.shuffle);
    rc.train.shuffle_seed = t.value("shuffle_seed", rc.train.shuffle_seed);
    const std::string mode = t.value("backprop", "reconstruct");
    if (mode == "reconstruct") {
      rc.train.backprop = BackpropMode::kReconstruct;
    } else if (mode == "stored") {
      rc.train.backprop = BackpropMode::kStored;
    } else {
      throw std::invalid_argument(
          "config: train.backprop must be \"reconstruct\" or \"stored\"");
    }
    if (rc.train.epochs < 1)
      throw std::invalid_argument("config: train.epochs must be >= 1");
    if (!(rc.train.learning_rate > 0))
      throw std::invalid_argument("config: train.learning_rate must be > 0");
    if (rc.train.patience < 1)
      throw std::invalid_argument("config: train.patience must be >= 1");
  }

  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::check_known_keys(d, "data",
                             {"stride", "batch_size", "encode_direction",
                              "include_power_history"});
    rc.data.stride = d.value("stride", rc.data.stride);
    rc.data.batch_size = d.value("batch_size", rc.data.batch_size);
    rc.data.features.encode_direction =
        d.value("encode_direction", rc.data.features.encode_direction);
    rc.data.features.include_power_history =
        d.value("include_power_history", rc.data.features.include_power_history);
    if (rc.data.stride < 1) throw std::invalid_argument("config: data.stride must be >= 1");
    if (rc.data.batch_size < 1)
      throw std::invalid_argument("config: data.batch_size must be >= 1");
  }

  rc.data.input_len = rc.model.seq_len;
  rc.data.pred_len = rc.model.pred_len;
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw std::invalid_argument("config: cannot open " + path);
  nlohmann::json j;
  try {
    file >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(detail::str("config: ", path, " is not valid JSON: ",
                                            e.what()));
  }
  return run_config_from_json(j);
}

inline nlohmann::json run_config_to_json(const RunConfig& rc) {
  nlohmann::json j;
  j["model"] = Model::config_to_json(rc.model);
  j["train"] = {{"epochs", rc.train.epochs},
                {"learning_rate", rc.train.learning_rate},
                {"patience", rc.train.patience},
                {"backprop", rc.train.backprop == BackpropMode::kReconstruct
                                 ? "reconstruct"
                                 : "stored"},
                {"shuffle", rc.train.shuffle},
                {"shuffle_seed", rc.train.shuffle_seed}};
  j["data"] = {{"stride", rc.data.stride},
               {"batch_size", rc.data.batch_size},
               {"encode_direction", rc.data.features.encode_direction},
               {"include_power_history", rc.data.features.include_power_history}};
  return j;
}

/// Decide which declared schema a CSV header satisfies: the full wind-farm
/// layout if every column is present, otherwise the synthetic layout, with a
/// named-column error when neither fits.
inline Schema detect_schema(const std::string& csv_path) {
  std::ifstream file(csv_path);
  if (!file) throw std::runtime_error("detect_schema: cannot open " + csv_path);
  std::string line;
  if (!std::getline(file, line))
    throw std::runtime_error("detect_schema: empty file: " + csv_path);
  const std::vector<std::string> header = detail::split_csv_line(line);
  auto has = [&](const std::string& name) {
    return std::find(header.begin(), header.end(), name) != header.end();
  };

  const Schema farm = Schema::wind_farm();
  bool is_farm = true;
  for (const std::string& c : farm.columns) is_farm = is_farm && has(c);
  if (is_farm) return farm;

  if (!has("Power (MW)"))
    throw std::runtime_error(detail::str(
        "detect_schema: missing required column \"Power (MW)\" in ", csv_path));
  if (!has("Wind speed at the height of wheel hub (m/s)"))
    throw std::runtime_error(detail::str(
        "detect_schema: missing required column \"Wind speed at the height of wheel "
        "hub (m/s)\" in ",
        csv_path));
  std::size_t covariates = 0;
  while (has("Covariate " + std::to_string(covariates + 2))) ++covariates;
  return Schema::synthetic(2 + covariates);
}

/// FNV-1a fingerprint of a file's bytes, for run manifests.
inline std::string file_fingerprint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("file_fingerprint: cannot open " + path);
  std::uint64_t hash = 1469598103934665603ull;
  char buf[1 << 14];
  while (file.read(buf, sizeof buf) || file.gcount() > 0) {
    const std::streamsize n = file.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      hash ^= static_cast<unsigned char>(buf[i]);
      hash *= 1099511628211ull;
    }
    if (!file) break;
  }
  char out[32];
  std::snprintf(out, sizeof out, "fnv1a:%016llx", static_cast<unsigned long long>(hash));
  return out;
}

}  // namespace powerformer

#endif  // POWERFORMER_CONFIG_HPP
