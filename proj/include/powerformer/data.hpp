#ifndef POWERFORMER_DATA_HPP
#define POWERFORMER_DATA_HPP

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "powerformer/rng.hpp"
#include "powerformer/tensor.hpp"

namespace powerformer {

// ---------------------------------------------------------------------------
// Calendar helpers (UTC, no timezone dependence)
// ---------------------------------------------------------------------------

namespace detail {

inline std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                       static_cast<unsigned>(d) - 1u;
  const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
  return static_cast<std::int64_t>(era) * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  y = static_cast<int>(yy + (m <= 2));
}

}  // namespace detail

/// Parse "YYYY-MM-DD hh:mm:ss" to epoch seconds; returns false on malformed input.
inline bool parse_timestamp(const std::string& text, std::int64_t& epoch) {
  int y, mo, d, h, mi, s;
  char tail;
  if (std::sscanf(text.c_str(), "%d-%d-%d %d:%d:%d%c", &y, &mo, &d, &h, &mi, &s,
                  &tail) != 6)
    return false;
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 ||
      s < 0 || s > 59)
    return false;
  epoch = detail::days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + s;
  return true;
}

inline std::string format_timestamp(std::int64_t epoch) {
  std::int64_t days = epoch / 86400;
  std::int64_t rem = epoch % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  int y, m, d;
  detail::civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02d %02d:%02d:%02d", y, m, d,
                static_cast<int>(rem / 3600), static_cast<int>((rem / 60) % 60),
                static_cast<int>(rem % 60));
  return buf;
}

// ---------------------------------------------------------------------------
// Schema and frame
// ---------------------------------------------------------------------------

/// Declared CSV layout: a timestamp column plus named numeric channels, the
/// last being the forecast target. Circular columns hold compass degrees and
/// get sine/cosine encoded before modeling.
struct Schema {
  std::string time_column = "Time";
  std::vector<std::string> columns;  // numeric channels, target included
  std::string target_column = "Power (MW)";
  std::vector<std::string> circular_columns;

  /// Wind-farm layout: hub-height and multi-altitude wind measurements,
  /// weather covariates, power target, 15-minute cadence.
  static Schema wind_farm() {
    Schema s;
    s.columns = {"Wind speed at height of 10 meters (m/s)",
                 "Wind direction at height of 10 meters (deg)",
                 "Wind speed at height of 30 meters (m/s)",
                 "Wind direction at height of 30 meters (deg)",
                 "Wind speed at height of 50 meters (m/s)",
                 "Wind direction at height of 50 meters (deg)",
                 "Wind speed at the height of wheel hub (m/s)",
                 "Wind direction at the height of wheel hub (deg)",
                 "Air temperature (degC)",
                 "Atmosphere pressure (hPa)",
                 "Relative humidity (%)",
                 "Power (MW)"};
    s.circular_columns = {"Wind direction at height of 10 meters (deg)",
                          "Wind direction at height of 30 meters (deg)",
                          "Wind direction at height of 50 meters (deg)",
                          "Wind direction at the height of wheel hub (deg)"};
    return s;
  }

  /// Layout produced by synth_wind: hub wind speed, generic covariates, power.
  static Schema synthetic(std::size_t n_channels) {
    if (n_channels < 2)
      throw std::invalid_argument("Schema::synthetic: need at least wind + power");
    Schema s;
    s.columns.push_back("Wind speed at the height of wheel hub (m/s)");
    for (std::size_t i = 2; i <= n_channels - 1; ++i)
      s.columns.push_back("Covariate " + std::to_string(i));
    s.columns.push_back("Power (MW)");
    return s;
  }
};

/// In-memory series: ordered timestamps plus named numeric channels.
/// Missing values are NaN until cleaning.
struct SeriesFrame {
  std::vector<std::int64_t> timestamps;
  std::vector<std::string> column_names;
  std::vector<std::vector<double>> columns;  // column-major

  std::size_t n_rows() const { return timestamps.size(); }

  bool has_column(const std::string& name) const {
    return std::find(column_names.begin(), column_names.end(), name) !=
           column_names.end();
  }

  const std::vector<double>& column(const std::string& name) const {
    for (std::size_t i = 0; i < column_names.size(); ++i)
      if (column_names[i] == name) return columns[i];
    throw std::invalid_argument(detail::str("SeriesFrame: no column named \"", name, "\""));
  }

  std::vector<double>& column(const std::string& name) {
    for (std::size_t i = 0; i < column_names.size(); ++i)
      if (column_names[i] == name) return columns[i];
    throw std::invalid_argument(detail::str("SeriesFrame: no column named \"", name, "\""));
  }

  SeriesFrame rows(std::size_t start, std::size_t count) const {
    SeriesFrame out;
    out.timestamps.assign(timestamps.begin() + start, timestamps.begin() + start + count);
    out.column_names = column_names;
    out.columns.reserve(columns.size());
    for (const auto& col : columns)
      out.columns.emplace_back(col.begin() + start, col.begin() + start + count);
    return out;
  }
};

// ---------------------------------------------------------------------------
// CSV loading
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    // trim surrounding whitespace and a trailing CR
    std::size_t b = cell.find_first_not_of(" \t\r");
    std::size_t e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

inline bool parse_number(const std::string& text, double& value) {
  if (text.empty()) return false;
  char* end = nullptr;
  value = std::strtod(text.c_str(), &end);
  return end == text.c_str() + text.size() && std::isfinite(value);
}

}  // namespace detail

/// Load a comma-separated UTF-8 file with a header row. Every schema column
/// must be present; malformed numeric cells become missing values and the row
/// is retained; malformed timestamps are an error.
inline SeriesFrame load_csv(const std::string& path, const Schema& schema) {
  std::ifstream file(path);
  if (!file) throw std::runtime_error(detail::str("load_csv: cannot open ", path));
  std::string line;
  if (!std::getline(file, line))
    throw std::runtime_error(detail::str("load_csv: empty file: ", path));

  const std::vector<std::string> header = detail::split_csv_line(line);
  auto column_of = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw std::runtime_error(detail::str("load_csv: missing required column \"",
                                         name, "\" in ", path));
  };

  const std::size_t time_idx = column_of(schema.time_column);
  std::vector<std::size_t> indices;
  indices.reserve(schema.columns.size());
  for (const std::string& name : schema.columns) indices.push_back(column_of(name));

  SeriesFrame frame;
  frame.column_names = schema.columns;
  frame.columns.assign(schema.columns.size(), {});

  std::size_t row_number = 1;
  while (std::getline(file, line)) {
    ++row_number;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> cells = detail::split_csv_line(line);
    if (cells.size() < header.size())
      throw std::runtime_error(detail::str("load_csv: row ", row_number, " has ",
                                           cells.size(), " cells, expected ",
                                           header.size()));
    std::int64_t epoch;
    if (!parse_timestamp(cells[time_idx], epoch))
      throw std::runtime_error(detail::str("load_csv: unparseable timestamp \"",
                                           cells[time_idx], "\" at row ", row_number));
    frame.timestamps.push_back(epoch);
    for (std::size_t c = 0; c < indices.size(); ++c) {
      double value;
      frame.columns[c].push_back(detail::parse_number(cells[indices[c]], value)
                                     ? value
                                     : std::numeric_limits<double>::quiet_NaN());
    }
  }
  if (frame.n_rows() == 0)
    throw std::runtime_error(detail::str("load_csv: no data rows in ", path));
  return frame;
}

inline void write_csv(const SeriesFrame& frame, const std::string& path,
                      const std::string& time_column = "Time") {
  std::ofstream file(path);
  if (!file) throw std::runtime_error(detail::str("write_csv: cannot open ", path));
  file << time_column;
  for (const std::string& name : frame.column_names) file << "," << name;
  file << "\n";
  char buf[40];
  for (std::size_t r = 0; r < frame.n_rows(); ++r) {
    file << format_timestamp(frame.timestamps[r]);
    for (const auto& col : frame.columns) {
      std::snprintf(buf, sizeof buf, "%.17g", col[r]);
      file << "," << buf;
    }
    file << "\n";
  }
}

// ---------------------------------------------------------------------------
// Cleaning
// ---------------------------------------------------------------------------

struct ChannelCleanStats {
  std::string name;
  std::size_t imputed = 0;
  std::size_t outliers_clipped = 0;
  std::size_t negatives_clipped = 0;
};

struct CleanReport {
  std::vector<ChannelCleanStats> channels;

  std::size_t total_changes() const {
    std::size_t n = 0;
    for (const auto& c : channels)
      n += c.imputed + c.outliers_clipped + c.negatives_clipped;
    return n;
  }

  void write(const std::string& path) const {
    std::ofstream file(path);
    if (!file) throw std::runtime_error("CleanReport: cannot open " + path);
    file << "cleaning report\n";
    for (const auto& c : channels)
      file << c.name << ": imputed=" << c.imputed
           << " outliers_clipped=" << c.outliers_clipped
           << " negatives_clipped=" << c.negatives_clipped << "\n";
    file << "total_changes=" << total_changes() << "\n";
  }
};

namespace detail {

inline double median_of(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace detail

/// Validate cadence, impute missing values (linear interior interpolation,
/// nearest fill at the ends), clip outliers beyond 5 robust z-scores
/// (|x - median| > 5 * MAD) to the bound, and clip negative target values to
/// zero. Every change is counted per channel. A channel more than half
/// missing is an error.
inline CleanReport clean(SeriesFrame& frame, const std::string& target_column) {
  const std::size_t rows = frame.n_rows();
  if (rows == 0) throw std::runtime_error("clean: empty frame");
  for (std::size_t r = 1; r < rows; ++r)
    if (frame.timestamps[r] <= frame.timestamps[r - 1])
      throw std::runtime_error(detail::str("clean: timestamps not strictly increasing at row ", r));
  if (rows >= 3) {
    const std::int64_t step = frame.timestamps[1] - frame.timestamps[0];
    for (std::size_t r = 2; r < rows; ++r)
      if (frame.timestamps[r] - frame.timestamps[r - 1] != step)
        throw std::runtime_error(detail::str(
            "clean: non-uniform cadence at row ", r, " (expected step ", step, "s)"));
  }

  CleanReport report;
  for (std::size_t c = 0; c < frame.columns.size(); ++c) {
    std::vector<double>& col = frame.columns[c];
    ChannelCleanStats stats;
    stats.name = frame.column_names[c];

    std::size_t missing = 0;
    for (double v : col) missing += std::isnan(v) ? 1 : 0;
    if (missing * 2 > rows)
      throw std::runtime_error(detail::str("clean: channel \"", stats.name, "\" is ",
                                           missing, "/", rows, " missing"));

    // linear interpolation between known neighbors, nearest fill at ends
    if (missing > 0) {
      std::size_t i = 0;
      while (i < rows) {
        if (!std::isnan(col[i])) {
          ++i;
          continue;
        }
        std::size_t gap_end = i;
        while (gap_end < rows && std::isnan(col[gap_end])) ++gap_end;
        const bool has_left = i > 0;
        const bool has_right = gap_end < rows;
        for (std::size_t j = i; j < gap_end; ++j) {
          if (has_left && has_right) {
            const double left = col[i - 1];
            const double right = col[gap_end];
            const double frac = static_cast<double>(j - (i - 1)) /
                                static_cast<double>(gap_end - (i - 1));
            col[j] = left + frac * (right - left);
          } else if (has_left) {
            col[j] = col[i - 1];
          } else {
            col[j] = col[gap_end];
          }
          ++stats.imputed;
        }
        i = gap_end;
      }
    }

    // robust clip: |x - median| > 5 * MAD
    const double med = detail::median_of(col);
    std::vector<double> deviations(rows);
    for (std::size_t r = 0; r < rows; ++r) deviations[r] = std::fabs(col[r] - med);
    const double mad = detail::median_of(deviations);
    if (mad > 0.0) {
      const double lo = med - 5.0 * mad;
      const double hi = med + 5.0 * mad;
      for (double& v : col) {
        if (v < lo) {
          v = lo;
          ++stats.outliers_clipped;
        } else if (v > hi) {
          v = hi;
          ++stats.outliers_clipped;
        }
      }
    }

    if (frame.column_names[c] == target_column) {
      for (double& v : col)
        if (v < 0.0) {
          v = 0.0;
          ++stats.negatives_clipped;
        }
    }
    report.channels.push_back(stats);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Chronological split
// ---------------------------------------------------------------------------

struct SplitFrames {
  SeriesFrame train, val, test;
};

/// Contiguous chronological 7:1:2 split: floor(0.7 n) / floor(0.1 n) / rest.
inline SplitFrames split_7_1_2(const SeriesFrame& frame) {
  const std::size_t n = frame.n_rows();
  const std::size_t n_train = (n * 7) / 10;
  const std::size_t n_val = n / 10;
  const std::size_t n_test = n - n_train - n_val;
  if (n_train == 0 || n_val == 0 || n_test == 0)
    throw std::runtime_error(detail::str("split_7_1_2: too few rows (", n, ")"));
  return SplitFrames{frame.rows(0, n_train), frame.rows(n_train, n_val),
                     frame.rows(n_train + n_val, n_test)};
}

// ---------------------------------------------------------------------------
// Feature building and normalization
// ---------------------------------------------------------------------------

struct FeatureOptions {
  bool encode_direction = true;      // circular degrees -> sine/cosine pair
  bool include_power_history = true; // target series also enters as a channel
};

/// Model-ready channel matrix: circular columns expanded, timestamp dropped,
/// target kept alongside (raw) for window targets and baselines.
struct FeatureMatrix {
  std::vector<std::string> names;
  std::vector<std::vector<double>> channels;  // [channel][row]
  std::vector<double> target;
  std::vector<std::int64_t> timestamps;

  std::size_t n_rows() const { return target.size(); }
  std::size_t n_channels() const { return channels.size(); }
};

inline FeatureMatrix build_features(const SeriesFrame& frame, const Schema& schema,
                                    const FeatureOptions& opts) {
  constexpr double kDegToRad = 3.14159265358979323846 / 180.0;
  FeatureMatrix out;
  out.timestamps = frame.timestamps;
  out.target = frame.column(schema.target_column);
  for (const std::string& name : schema.columns) {
    const bool is_target = name == schema.target_column;
    if (is_target && !opts.include_power_history) continue;
    const std::vector<double>& col = frame.column(name);
    const bool circular =
        opts.encode_direction &&
        std::find(schema.circular_columns.begin(), schema.circular_columns.end(),
                  name) != schema.circular_columns.end();
    if (circular) {
      std::vector<double> sin_col(col.size()), cos_col(col.size());
      for (std::size_t r = 0; r < col.size(); ++r) {
        sin_col[r] = std::sin(col[r] * kDegToRad);
        cos_col[r] = std::cos(col[r] * kDegToRad);
      }
      out.names.push_back(name + " [sin]");
      out.channels.push_back(std::move(sin_col));
      out.names.push_back(name + " [cos]");
      out.channels.push_back(std::move(cos_col));
    } else {
      out.names.push_back(name);
      out.channels.push_back(col);
    }
  }
  return out;
}

/// Per-channel standardization fit on the training split only. Degenerate
/// channels (zero spread) get std 1 and a recorded warning. The target series
/// has its own mean/std for loss-space and MW-space conversions.
class Normalizer {
 public:
  void fit(const FeatureMatrix& train) {
    means_.clear();
    stds_.clear();
    warnings_.clear();
    for (std::size_t c = 0; c < train.n_channels(); ++c) {
      auto [mu, sd] = stats(train.channels[c]);
      if (sd <= 0.0) {
        warnings_.push_back(detail::str("channel \"", train.names[c],
                                        "\" has zero spread; std set to 1"));
        sd = 1.0;
      }
      means_.push_back(mu);
      stds_.push_back(sd);
    }
    auto [tmu, tsd] = stats(train.target);
    if (tsd <= 0.0) {
      warnings_.push_back("target has zero spread; std set to 1");
      tsd = 1.0;
    }
    target_mean_ = tmu;
    target_std_ = tsd;
    fitted_ = true;
  }

  FeatureMatrix transform(const FeatureMatrix& m) const {
    require_fitted("transform");
    if (m.n_channels() != means_.size())
      throw std::invalid_argument("Normalizer: channel count changed since fit");
    FeatureMatrix out = m;
    for (std::size_t c = 0; c < out.n_channels(); ++c)
      for (double& v : out.channels[c]) v = (v - means_[c]) / stds_[c];
    for (double& v : out.target) v = (v - target_mean_) / target_std_;
    return out;
  }

  FeatureMatrix inverse(const FeatureMatrix& m) const {
    require_fitted("inverse");
    FeatureMatrix out = m;
    for (std::size_t c = 0; c < out.n_channels(); ++c)
      for (double& v : out.channels[c]) v = v * stds_[c] + means_[c];
    for (double& v : out.target) v = v * target_std_ + target_mean_;
    return out;
  }

  double denormalize_target(double v) const {
    require_fitted("denormalize_target");
    return v * target_std_ + target_mean_;
  }

  bool fitted() const { return fitted_; }
  const std::vector<double>& means() const { return means_; }
  const std::vector<double>& stds() const { return stds_; }
  double target_mean() const { return target_mean_; }
  double target_std() const { return target_std_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  void restore(std::vector<double> means, std::vector<double> stds,
               double target_mean, double target_std) {
    means_ = std::move(means);
    stds_ = std::move(stds);
    target_mean_ = target_mean;
    target_std_ = target_std;
    fitted_ = true;
  }

 private:
  static std::pair<double, double> stats(const std::vector<double>& v) {
    double mu = 0.0;
    for (double x : v) mu += x;
    mu /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mu) * (x - mu);
    var /= static_cast<double>(v.size());
    return {mu, std::sqrt(var)};
  }

  void require_fitted(const char* what) const {
    if (!fitted_)
      throw std::logic_error(detail::str("Normalizer::", what,
                                         ": called before fit on the training split"));
  }

  std::vector<double> means_, stds_;
  double target_mean_ = 0.0, target_std_ = 1.0;
  std::vector<std::string> warnings_;
  bool fitted_ = false;
};

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

/// A batch of sliding windows: inputs (B, T, V), targets (B, P) where the
/// target steps immediately follow each input window.
struct WindowBatch {
  Tensor inputs;
  Tensor targets;

  std::size_t batch_size() const { return inputs.shape()[0]; }
};

inline std::vector<std::size_t> window_starts(std::size_t n_rows, std::size_t input_len,
                                              std::size_t pred_len, std::size_t stride) {
  if (stride == 0) throw std::invalid_argument("window_starts: stride must be >= 1");
  if (n_rows < input_len + pred_len)
    throw std::invalid_argument(detail::str("window_starts: ", n_rows,
                                            " rows cannot fit input ", input_len,
                                            " + horizon ", pred_len));
  std::vector<std::size_t> starts;
  const std::size_t count = (n_rows - input_len - pred_len) / stride + 1;
  starts.reserve(count);
  for (std::size_t w = 0; w < count; ++w) starts.push_back(w * stride);
  return starts;
}

/// Materialize window batches from a (normalized) feature matrix.
inline std::vector<WindowBatch> make_windows(const FeatureMatrix& m,
                                             std::size_t input_len, std::size_t pred_len,
                                             std::size_t stride, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("make_windows: batch_size must be >= 1");
  const std::vector<std::size_t> starts =
      window_starts(m.n_rows(), input_len, pred_len, stride);
  const std::size_t channels = m.n_channels();

  std::vector<WindowBatch> batches;
  for (std::size_t begin = 0; begin < starts.size(); begin += batch_size) {
    const std::size_t count = std::min(batch_size, starts.size() - begin);
    Tensor inputs = Tensor::zeros({count, input_len, channels});
    Tensor targets = Tensor::zeros({count, pred_len});
    for (std::size_t w = 0; w < count; ++w) {
      const std::size_t s = starts[begin + w];
      for (std::size_t t = 0; t < input_len; ++t)
        for (std::size_t c = 0; c < channels; ++c)
          inputs.data()[(w * input_len + t) * channels + c] = m.channels[c][s + t];
      for (std::size_t p = 0; p < pred_len; ++p)
        targets.data()[w * pred_len + p] = m.target[s + input_len + p];
    }
    batches.push_back(WindowBatch{inputs, targets});
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Synthetic wind data
// ---------------------------------------------------------------------------

/// Generate a wind-like frame at 15-minute cadence: covariates mix daily
/// (96-step) and weekly (672-step) sinusoids with AR(1) noise; power follows
/// a saturating cubic power curve of the synthetic hub wind speed, clipped to
/// [0, capacity]. Same seed, same frame.
inline SeriesFrame synth_wind(std::uint64_t seed, std::size_t n_rows, std::size_t n_channels,
                              double capacity_mw = 100.0) {
  if (n_rows < 1) throw std::invalid_argument("synth_wind: n_rows must be >= 1");
  if (n_channels < 2) throw std::invalid_argument("synth_wind: need at least 2 channels");
  constexpr double kTwoPi = 2.0 * 3.14159265358979323846;
  constexpr std::int64_t kStart = 1577836800;  // 2020-01-01 00:00:00 UTC
  constexpr double kDaily = 96.0, kWeekly = 672.0;

  Rng rng(seed);
  const Schema schema = Schema::synthetic(n_channels);
  SeriesFrame frame;
  frame.column_names = schema.columns;
  frame.columns.assign(n_channels, std::vector<double>(n_rows, 0.0));
  frame.timestamps.resize(n_rows);
  for (std::size_t r = 0; r < n_rows; ++r)
    frame.timestamps[r] = kStart + static_cast<std::int64_t>(r) * 900;

  // hub wind speed: channel 0
  {
    const double phase_d = rng.uniform(0.0, kTwoPi);
    const double phase_w = rng.uniform(0.0, kTwoPi);
    double ar = 0.0;
    for (std::size_t r = 0; r < n_rows; ++r) {
      ar = 0.8 * ar + 0.6 * rng.gaussian();
      const double t = static_cast<double>(r);
      const double v = 7.0 + 3.0 * std::sin(kTwoPi * t / kDaily + phase_d) +
                       1.5 * std::sin(kTwoPi * t / kWeekly + phase_w) + ar;
      frame.columns[0][r] = std::max(0.0, v);
    }
  }

  // generic covariates
  for (std::size_t c = 1; c + 1 < n_channels; ++c) {
    const double amp_d = rng.uniform(0.5, 2.0);
    const double amp_w = rng.uniform(0.2, 1.0);
    const double phase_d = rng.uniform(0.0, kTwoPi);
    const double phase_w = rng.uniform(0.0, kTwoPi);
    double ar = 0.0;
    for (std::size_t r = 0; r < n_rows; ++r) {
      ar = 0.7 * ar + 0.3 * rng.gaussian();
      const double t = static_cast<double>(r);
      frame.columns[c][r] = amp_d * std::sin(kTwoPi * t / kDaily + phase_d) +
                            amp_w * std::sin(kTwoPi * t / kWeekly + phase_w) + ar;
    }
  }

  // power: saturating cubic of wind speed plus noise, clipped at capacity
  {
    constexpr double kCutIn = 3.0, kRated = 12.0;
    std::vector<double>& power = frame.columns[n_channels - 1];
    for (std::size_t r = 0; r < n_rows; ++r) {
      const double w = frame.columns[0][r];
      double frac = (w - kCutIn) / (kRated - kCutIn);
      frac = std::clamp(frac, 0.0, 1.0);
      const double p = capacity_mw * frac * frac * frac + 2.0 * rng.gaussian();
      power[r] = std::clamp(p, 0.0, capacity_mw);
    }
  }
  return frame;
}

// ---------------------------------------------------------------------------
// End-to-end dataset preparation
// ---------------------------------------------------------------------------

struct DatasetOptions {
  FeatureOptions features;
  std::size_t input_len = 288;
  std::size_t pred_len = 288;
  std::size_t stride = 1;
  std::size_t batch_size = 32;
};

/// Cleaned, split, normalized, windowed dataset ready for training.
struct Dataset {
  std::vector<WindowBatch> train, val, test;
  Normalizer normalizer;
  std::vector<std::string> channel_names;
  CleanReport clean_report;
  std::size_t n_channels = 0;
};

inline Dataset prepare_dataset(SeriesFrame frame, const Schema& schema,
                               const DatasetOptions& opts) {
  Dataset ds;
  ds.clean_report = clean(frame, schema.target_column);
  const SplitFrames splits = split_7_1_2(frame);

  FeatureMatrix train_features = build_features(splits.train, schema, opts.features);
  FeatureMatrix val_features = build_features(splits.val, schema, opts.features);
  FeatureMatrix test_features = build_features(splits.test, schema, opts.features);

  ds.normalizer.fit(train_features);
  ds.channel_names = train_features.names;
  ds.n_channels = train_features.n_channels();

  ds.train = make_windows(ds.normalizer.transform(train_features), opts.input_len,
                          opts.pred_len, opts.stride, opts.batch_size);
  ds.val = make_windows(ds.normalizer.transform(val_features), opts.input_len,
                        opts.pred_len, opts.stride, opts.batch_size);
  ds.test = make_windows(ds.normalizer.transform(test_features), opts.input_len,
                         opts.pred_len, opts.stride, opts.batch_size);
  return ds;
}

}  // namespace powerformer

#endif  // POWERFORMER_DATA_HPP
