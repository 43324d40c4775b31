#ifndef POWERFORMER_CLI_HPP
#define POWERFORMER_CLI_HPP

#include <array>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <json.hpp>

#include "powerformer/config.hpp"
#include "powerformer/data.hpp"
#include "powerformer/model.hpp"
#include "powerformer/train.hpp"

namespace powerformer::cli {

inline constexpr const char* kVersion = "0.1.0";

// Exit codes shared by every subcommand.
inline constexpr int kOk = 0;
inline constexpr int kConfigError = 1;
inline constexpr int kDataError = 2;
inline constexpr int kDivergence = 3;

namespace detail_cli {

inline bool quiet() {
  const char* env = std::getenv("POWERFORMER_LOG");
  return env != nullptr && std::string(env) == "quiet";
}

inline void info(const std::string& message) {
  if (!quiet()) std::cerr << message << "\n";
}

inline void fail(const std::string& message) { std::cerr << "error: " << message << "\n"; }

inline std::filesystem::path ensure_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  std::filesystem::create_directories(p);
  return p;
}

/// Apply a "TFL" bit-triple override like "101" (transpose, fecam, lstm).
inline void apply_flags(ModelConfig& config, const std::string& flags) {
  if (flags.size() != 3 || flags.find_first_not_of("01") != std::string::npos)
    throw std::invalid_argument(
        "flags override must be three 0/1 characters (transpose, fecam, lstm)");
  config.use_transpose = flags[0] == '1';
  config.use_fecam = flags[1] == '1';
  config.use_lstm = flags[2] == '1';
}

}  // namespace detail_cli

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out_path;
  std::size_t rows = 8000;
  std::size_t channels = 4;
  std::uint64_t seed = 42;
};

inline int cmd_synth(const SynthArgs& args) {
  try {
    write_csv(synth_wind(args.seed, args.rows, args.channels), args.out_path);
    detail_cli::info(detail::str("wrote ", args.rows, " rows to ", args.out_path));
    return kOk;
  } catch (const std::exception& e) {
    detail_cli::fail(e.what());
    return kDataError;
  }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config_path;
  std::string data_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> flags;  // ablation triple override, e.g. "101"
};

namespace detail_cli {

struct PreparedRun {
  RunConfig config;
  Dataset dataset;
  Schema schema;
};

inline RunConfig load_config_phase(const TrainArgs& args) {
  RunConfig rc = args.config_path.empty() ? RunConfig{} : load_run_config(args.config_path);
  if (args.seed) rc.model.seed = *args.seed;
  if (args.flags) apply_flags(rc.model, *args.flags);
  // validate everything that does not depend on the dataset channel count
  ModelConfig probe = rc.model;
  if (probe.n_channels == 0) probe.n_channels = 1;
  probe.validate();
  return rc;
}

inline PreparedRun prepare_phase(RunConfig rc, const std::string& data_path) {
  Schema schema = detect_schema(data_path);
  SeriesFrame frame = load_csv(data_path, schema);
  Dataset ds = prepare_dataset(std::move(frame), schema, rc.data);
  rc.model.n_channels = ds.n_channels;
  return PreparedRun{std::move(rc), std::move(ds), std::move(schema)};
}

inline nlohmann::json manifest_json(const RunConfig& rc, const std::string& data_path,
                                    const nlohmann::json& artifacts) {
  return {{"tool", "powerformer"},
          {"version", kVersion},
          {"seed", rc.model.seed},
          {"data_path", data_path},
          {"data_fingerprint", file_fingerprint(data_path)},
          {"config", run_config_to_json(rc)},
          {"artifacts", artifacts}};
}

inline nlohmann::json checkpoint_extra(const RunConfig& rc) {
  return {{"stride", rc.data.stride},
          {"batch_size", rc.data.batch_size},
          {"encode_direction", rc.data.features.encode_direction},
          {"include_power_history", rc.data.features.include_power_history}};
}

}  // namespace detail_cli

inline int cmd_train(const TrainArgs& args) {
  RunConfig rc;
  try {
    rc = detail_cli::load_config_phase(args);
  } catch (const std::exception& e) {
    detail_cli::fail(e.what());
    return kConfigError;
  }

  detail_cli::PreparedRun run{std::move(rc), {}, {}};
  try {
    run = detail_cli::prepare_phase(std::move(run.config), args.data_path);
  } catch (const std::exception& e) {
    detail_cli::fail(e.what());
    return kDataError;
  }

  std::optional<Model> model;
  try {
    run.config.model.validate();
    model.emplace(run.config.model);
  } catch (const std::exception& e) {
    detail_cli::fail(e.what());
    return kConfigError;
  }

  detail_cli::info(detail::str("training on ", args.data_path, " (",
                               run.dataset.n_channels, " channels, seed ",
                               run.config.model.seed, ")"));
  TrainReport report = train(*model, run.dataset, run.config.train);

  const auto dir = detail_cli::ensure_dir(args.out_dir);
  report.write((dir / "report.txt").string());
  report.write_timing((dir / "timing.txt").string());
  run.dataset.clean_report.write((dir / "cleaning_report.txt").string());
  model->save_checkpoint((dir / "checkpoint.json").string(), run.dataset.normalizer,
                         run.dataset.channel_names,
                         detail_cli::checkpoint_extra(run.config));
  {
    nlohmann::json artifacts = {{"checkpoint", "checkpoint.json"},
                                {"report", "report.txt"},
                                {"timing", "timing.txt"},
                                {"cleaning_report", "cleaning_report.txt"}};
    std::ofstream mf(dir / "manifest.json");
    mf << detail_cli::manifest_json(run.config, args.data_path, artifacts).dump(1) << "\n";
  }

  if (report.diverged) {
    detail_cli::fail("training diverged (non-finite loss); artifacts written");
    return kDivergence;
  }
  detail_cli::info(detail::str("test mse ", report.test_normalized.mse, " mae ",
                               report.test_normalized.mae, " mape ",
                               report.test_normalized.mape));
  return kOk;
}

// ---------------------------------------------------------------------------
// predict / eval
// ---------------------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint_path;
  std::string data_path;
  std::string out_path;  // predictions CSV (predict only)
};

namespace detail_cli {

struct Evaluation {
  Metrics normalized;
  Metrics mw;
  // flattened per-window rows: window, step, truth, prediction (normalized)
  std::vector<std::array<double, 4>> rows;
  const Normalizer* normalizer = nullptr;
};

inline Evaluation evaluate_checkpoint(const LoadedModel& loaded,
                                      const std::string& data_path) {
  const ModelConfig& mc = loaded.model.config();
  FeatureOptions fopts;
  fopts.encode_direction = loaded.extra.value("encode_direction", true);
  fopts.include_power_history = loaded.extra.value("include_power_history", true);
  const std::size_t stride = loaded.extra.value("stride", std::size_t{1});

  Schema schema = detect_schema(data_path);
  SeriesFrame frame = load_csv(data_path, schema);
  clean(frame, schema.target_column);
  const SplitFrames splits = split_7_1_2(frame);
  FeatureMatrix features = build_features(splits.test, schema, fopts);
  if (features.names != loaded.channel_names)
    throw std::runtime_error(detail::str(
        "checkpoint expects ", loaded.channel_names.size(), " channels but ",
        data_path, " yields ", features.names.size(),
        " (channel layout mismatch)"));
  FeatureMatrix normalized = loaded.normalizer.transform(features);

  const std::vector<WindowBatch> batches =
      make_windows(normalized, mc.seq_len, mc.pred_len, stride,
                   loaded.extra.value("batch_size", std::size_t{32}));

  Evaluation eval;
  eval.normalizer = &loaded.normalizer;
  std::vector<double> truth, pred, truth_mw, pred_mw;
  std::size_t window = 0;
  for (const WindowBatch& b : batches) {
    Tensor yhat = loaded.model.forward(b.inputs).y_hat;
    const std::size_t batch = yhat.shape()[0];
    for (std::size_t w = 0; w < batch; ++w, ++window)
      for (std::size_t p = 0; p < mc.pred_len; ++p) {
        const double y = b.targets.at({w, p});
        const double f = yhat.at({w, p});
        truth.push_back(y);
        pred.push_back(f);
        truth_mw.push_back(loaded.normalizer.denormalize_target(y));
        pred_mw.push_back(loaded.normalizer.denormalize_target(f));
        eval.rows.push_back({static_cast<double>(window), static_cast<double>(p), y, f});
      }
  }
  if (truth.empty()) throw std::runtime_error("no test windows in " + data_path);
  eval.normalized = compute_metrics(truth, pred);
  eval.mw = compute_metrics(truth_mw, pred_mw);
  return eval;
}

}  // namespace detail_cli

inline int cmd_predict(const PredictArgs& args) {
  std::optional<LoadedModel> loaded;
  try {
    loaded.emplace(load_checkpoint(args.checkpoint_path));
  } catch (const std::exception& e) {
    detail_cli::fail(e.what());
    return kConfigError;
  }
  try {
    detail_cli::Evaluation eval = detail_cli::evaluate_checkpoint(*loaded, args.data_path);
    std::ofstream out(args.out_path);
    if (!out) throw std::runtime_error("cannot open " + args.out_path);
    out << "window,step,truth,prediction,truth_mw,prediction_mw\n";
    char buf[64];
    auto num = [&](double v) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return std::string(buf);
    };
    for (const auto& row : eval.rows) {
      out << static_cast<std::size_t>(row[0]) << "," << static_cast<std::size_t>(row[1])
          << "," << num(row[2]) << "," << num(row[3]) << ","
          << num(loaded->normalizer.denormalize_target(row[2])) << ","
          << num(loaded->normalizer.denormalize_target(row[3])) << "\n";
    }
    detail_cli::info(detail::str("wrote ", eval.rows.size(), " prediction rows to ",
                                 args.out_path, "; test mse ", eval.normalized.mse));
    return kOk;
  } catch (const std::exception& e) {
    detail_cli::fail(e.what());
    return kDataError;
  }
}

inline int cmd_eval(const PredictArgs& args) {
  std::optional<LoadedModel> loaded;
  try {
    loaded.emplace(load_checkpoint(args.checkpoint_path));
  } catch (const std::exception& e) {
    detail_cli::fail(e.what());
    return kConfigError;
  }
  try {
    detail_cli::Evaluation eval = detail_cli::evaluate_checkpoint(*loaded, args.data_path);
    std::cout << "normalized mse " << eval.normalized.mse << " mae " << eval.normalized.mae
              << " mape " << eval.normalized.mape << " mape_excluded "
              << eval.normalized.mape_excluded << "\n";
    std::cout << "mw mse " << eval.mw.mse << " mae " << eval.mw.mae << " mape "
              << eval.mw.mape << " mape_excluded " << eval.mw.mape_excluded << "\n";
    return kOk;
  } catch (const std::exception& e) {
    detail_cli::fail(e.what());
    return kDataError;
  }
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

inline int cmd_ablate(const TrainArgs& args) {
  RunConfig rc;
  try {
    rc = detail_cli::load_config_phase(args);
  } catch (const std::exception& e) {
    detail_cli::fail(e.what());
    return kConfigError;
  }

  detail_cli::PreparedRun run{std::move(rc), {}, {}};
  try {
    run = detail_cli::prepare_phase(std::move(run.config), args.data_path);
  } catch (const std::exception& e) {
    detail_cli::fail(e.what());
    return kDataError;
  }

  std::vector<AblationRow> rows;
  try {
    rows = ablation_grid(run.config.model);
  } catch (const std::exception& e) {
    detail_cli::fail(e.what());
    return kConfigError;
  }

  const auto dir = detail_cli::ensure_dir(args.out_dir);
  std::ofstream table(dir / "ablation.csv");
  table << "id,transpose,fecam,lstm,mse,mae,mape,mean_epoch_seconds,peak_bytes,"
           "score_entries\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };

  bool any_diverged = false;
  for (const AblationRow& row : rows) {
    detail_cli::info("ablation row " + row.label);
    Model model(row.config);
    TrainReport report = train(model, run.dataset, run.config.train);
    any_diverged = any_diverged || report.diverged;

    double seconds = 0.0;
    std::uint64_t peak = 0, entries = 0;
    for (const EpochRecord& e : report.epochs) {
      seconds += e.seconds;
      peak = std::max(peak, e.peak_bytes);
      entries += e.score_entries;
    }
    seconds /= report.epochs.empty() ? 1.0 : static_cast<double>(report.epochs.size());
    table << row.label << "," << (row.config.use_transpose ? 1 : 0) << ","
          << (row.config.use_fecam ? 1 : 0) << "," << (row.config.use_lstm ? 1 : 0)
          << "," << num(report.test_normalized.mse) << ","
          << num(report.test_normalized.mae) << "," << num(report.test_normalized.mape)
          << "," << num(seconds) << "," << peak << "," << entries << "\n";
  }
  table.close();

  {
    nlohmann::json artifacts = {{"ablation", "ablation.csv"}};
    std::ofstream mf(dir / "manifest.json");
    mf << detail_cli::manifest_json(run.config, args.data_path, artifacts).dump(1) << "\n";
  }
  if (any_diverged) {
    detail_cli::fail("one or more ablation rows diverged");
    return kDivergence;
  }
  detail_cli::info("wrote " + (dir / "ablation.csv").string());
  return kOk;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string config_path;
  std::string out_dir;
  std::size_t batch = 4;
};

/// Forward/backward timing and counter sweep over
/// {time tokens, variate tokens} x {dense, LSH} at the configured sizes.
inline int cmd_bench(const BenchArgs& args) {
  RunConfig rc;
  try {
    rc = args.config_path.empty() ? RunConfig{} : load_run_config(args.config_path);
    if (rc.model.n_channels == 0) rc.model.n_channels = 13;
  } catch (const std::exception& e) {
    detail_cli::fail(e.what());
    return kConfigError;
  }

  const auto dir = detail_cli::ensure_dir(args.out_dir);
  std::ofstream table(dir / "bench.csv");
  table << "tokens,attention,token_count,score_entries,peak_bytes,forward_seconds,"
           "backward_seconds\n";

  std::uint64_t entries_time_dense = 0, entries_variate_dense = 0;
  std::uint64_t entries_time_lsh = 0;

  for (const bool variate : {false, true}) {
    for (const AttentionKind kind : {AttentionKind::kDense, AttentionKind::kLsh}) {
      ModelConfig mc = rc.model;
      mc.use_transpose = variate;
      mc.attention = kind;
      try {
        mc.validate();
      } catch (const std::exception& e) {
        detail_cli::fail(e.what());
        return kConfigError;
      }
      Model model(mc);
      Rng rng(mc.seed + 17);
      Tensor x = Tensor::randn({args.batch, mc.seq_len, mc.n_channels}, rng);
      Tensor y = Tensor::randn({args.batch, mc.pred_len}, rng);

      attention_cost::reset();
      memstat::reset_peak();
      const auto t0 = std::chrono::steady_clock::now();
      model.forward(x);
      const auto t1 = std::chrono::steady_clock::now();
      const std::uint64_t forward_entries = attention_cost::score_entries();
      const std::uint64_t tokens = attention_cost::token_count();
      model.loss_and_gradients(x, y, rc.train.backprop);
      const auto t2 = std::chrono::steady_clock::now();

      if (!variate && kind == AttentionKind::kDense) entries_time_dense = forward_entries;
      if (variate && kind == AttentionKind::kDense) entries_variate_dense = forward_entries;
      if (!variate && kind == AttentionKind::kLsh) entries_time_lsh = forward_entries;

      table << (variate ? "variate" : "time") << ","
            << (kind == AttentionKind::kDense ? "dense" : "lsh") << "," << tokens << ","
            << forward_entries << "," << memstat::peak_bytes() << ","
            << std::chrono::duration<double>(t1 - t0).count() << ","
            << std::chrono::duration<double>(t2 - t1).count() << "\n";
    }
  }
  table.close();

  if (entries_time_dense > 0)
    std::cout << "variate/time score-entry ratio (dense): "
              << static_cast<double>(entries_variate_dense) /
                     static_cast<double>(entries_time_dense)
              << "\n";
  if (entries_time_dense > 0)
    std::cout << "lsh/dense score-entry ratio (time tokens): "
              << static_cast<double>(entries_time_lsh) /
                     static_cast<double>(entries_time_dense)
              << "\n";
  detail_cli::info("wrote " + (dir / "bench.csv").string());
  return kOk;
}

// ---------------------------------------------------------------------------
// selfcheck
// ---------------------------------------------------------------------------

namespace detail_cli {

inline bool check_csv_header(const std::filesystem::path& path, const std::string& expected,
                             std::string& why) {
  std::ifstream file(path);
  std::string line;
  if (!std::getline(file, line)) {
    why = "empty file";
    return false;
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != expected) {
    why = "header is \"" + line + "\"";
    return false;
  }
  return true;
}

}  // namespace detail_cli

/// Validate every recognized artifact in a run directory against its
/// documented schema. Exit 0 when all present artifacts parse.
inline int cmd_selfcheck(const std::string& dir_path) {
  namespace fs = std::filesystem;
  const fs::path dir(dir_path);
  if (!fs::is_directory(dir)) {
    detail_cli::fail("not a directory: " + dir_path);
    return kConfigError;
  }

  std::size_t checked = 0, failed = 0;
  auto result = [&](const std::string& name, bool ok, const std::string& why = "") {
    ++checked;
    if (!ok) ++failed;
    std::cout << (ok ? "OK   " : "FAIL ") << name << (why.empty() ? "" : ": " + why)
              << "\n";
  };

  if (fs::exists(dir / "manifest.json")) {
    std::string why;
    bool ok = true;
    try {
      std::ifstream f(dir / "manifest.json");
      nlohmann::json j;
      f >> j;
      for (const char* key : {"tool", "version", "seed", "data_fingerprint", "config"})
        if (!j.contains(key)) {
          ok = false;
          why = detail::str("missing key \"", key, "\"");
        }
    } catch (const std::exception& e) {
      ok = false;
      why = e.what();
    }
    result("manifest.json", ok, why);
  }

  if (fs::exists(dir / "report.txt")) {
    std::ifstream f(dir / "report.txt");
    std::string first;
    std::getline(f, first);
    result("report.txt", first == "powerformer training report v1",
           first == "powerformer training report v1" ? "" : "bad magic line");
  }

  if (fs::exists(dir / "checkpoint.json")) {
    std::string why;
    bool ok = true;
    try {
      load_checkpoint((dir / "checkpoint.json").string());
    } catch (const std::exception& e) {
      ok = false;
      why = e.what();
    }
    result("checkpoint.json", ok, why);
  }

  if (fs::exists(dir / "ablation.csv")) {
    std::string why;
    bool ok = detail_cli::check_csv_header(
        dir / "ablation.csv",
        "id,transpose,fecam,lstm,mse,mae,mape,mean_epoch_seconds,peak_bytes,score_entries",
        why);
    if (ok) {
      std::ifstream f(dir / "ablation.csv");
      std::string line;
      std::getline(f, line);
      std::size_t rows = 0;
      while (std::getline(f, line))
        if (!line.empty()) ++rows;
      if (rows != 5) {
        ok = false;
        why = detail::str("expected 5 rows, found ", rows);
      }
    }
    result("ablation.csv", ok, why);
  }

  if (fs::exists(dir / "bench.csv")) {
    std::string why;
    const bool ok = detail_cli::check_csv_header(
        dir / "bench.csv",
        "tokens,attention,token_count,score_entries,peak_bytes,forward_seconds,"
        "backward_seconds",
        why);
    result("bench.csv", ok, why);
  }

  if (fs::exists(dir / "predictions.csv")) {
    std::string why;
    const bool ok = detail_cli::check_csv_header(
        dir / "predictions.csv", "window,step,truth,prediction,truth_mw,prediction_mw",
        why);
    result("predictions.csv", ok, why);
  }

  if (fs::exists(dir / "cleaning_report.txt")) {
    std::ifstream f(dir / "cleaning_report.txt");
    std::string first;
    std::getline(f, first);
    result("cleaning_report.txt", first == "cleaning report",
           first == "cleaning report" ? "" : "bad magic line");
  }

  if (checked == 0) {
    detail_cli::fail("no recognized artifacts in " + dir_path);
    return kConfigError;
  }
  return failed == 0 ? kOk : kConfigError;
}

}  // namespace powerformer::cli

#endif  // POWERFORMER_CLI_HPP
