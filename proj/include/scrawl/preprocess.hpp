#pragma once

// Raw pen-recorder signals to fixed-shape model input: calibration, channel
// selection, unit conversion, Fourier resampling to a common length, and a
// signed log squash. Everything runs in double and is cast at the very end.

#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "scrawl/common.hpp"
#include "scrawl/csv.hpp"
#include "scrawl/tensor.hpp"

namespace scrawl {

// One recording: parallel name/series arrays so channel order is explicit.
struct RawSample {
  std::vector<std::string> channel_names;
  std::vector<std::vector<double>> channels;
  std::string writer_id;
  char label = 'a';

  std::size_t length() const { return channels.empty() ? 0 : channels.front().size(); }

  const std::vector<double>* find(const std::string& name) const {
    for (std::size_t i = 0; i < channel_names.size(); ++i)
      if (channel_names[i] == name) return &channels[i];
    return nullptr;
  }

  void validate() const {
    if (channel_names.size() != channels.size())
      throw config_error("raw sample: name/series count mismatch");
    if (channels.empty()) throw config_error("raw sample: no channels");
    const std::size_t len = channels.front().size();
    if (len < 2) throw config_error("raw sample: need at least 2 ticks, got " + std::to_string(len));
    for (std::size_t i = 0; i < channels.size(); ++i)
      if (channels[i].size() != len)
        throw config_error("raw sample: channel '" + channel_names[i] + "' has length " +
                           std::to_string(channels[i].size()) + ", expected " + std::to_string(len));
    for (std::size_t i = 0; i < channel_names.size(); ++i)
      for (std::size_t j = i + 1; j < channel_names.size(); ++j)
        if (channel_names[i] == channel_names[j])
          throw config_error("raw sample: duplicate channel '" + channel_names[i] + "'");
    LabelMap::index_of(label);
  }
};

struct Calibration {
  double bias = 0.0;
  double scale = 1.0;
};

// Per-channel affine correction. Channels missing from the table pass through.
struct CalibrationTable {
  std::map<std::string, Calibration> entries;

  Calibration lookup(const std::string& name) const {
    auto it = entries.find(name);
    return it == entries.end() ? Calibration{} : it->second;
  }

  // CSV with header `channel,bias,scale`.
  static CalibrationTable load_csv(const std::string& path) {
    const auto rows = read_csv(path);
    if (rows.empty() || rows.front() != std::vector<std::string>{"channel", "bias", "scale"})
      throw config_error(path + ": expected header 'channel,bias,scale'");
    CalibrationTable table;
    for (std::size_t r = 1; r < rows.size(); ++r) {
      const auto& row = rows[r];
      if (row.size() != 3)
        throw config_error(path + ": row " + std::to_string(r + 1) + " has " +
                           std::to_string(row.size()) + " fields, expected 3");
      Calibration cal;
      try {
        cal.bias = parse_double(row[1], "bias");
        cal.scale = parse_double(row[2], "scale");
      } catch (const config_error& e) {
        throw config_error(path + ": row " + std::to_string(r + 1) + ": " + e.what());
      }
      if (cal.scale == 0.0)
        throw config_error(path + ": channel '" + row[0] + "' has zero scale");
      if (!table.entries.emplace(row[0], cal).second)
        throw config_error(path + ": duplicate channel '" + row[0] + "'");
    }
    return table;
  }
};

// Fifteen-column recorder schema: two 3-axis accelerometers, gyroscope,
// magnetometer, force, and two auxiliary columns.
inline std::vector<std::string> default_channel_schema() {
  return {"a1x", "a1y", "a1z", "a2x", "a2y", "a2z", "gx", "gy",
          "gz",  "mx",  "my",  "mz",  "force", "aux1", "aux2"};
}

// The magnetometer columns carry no pen-motion information, so the default
// keep list drops them. Twelve channels remain.
inline std::vector<std::string> default_keep_channels() {
  std::vector<std::string> keep;
  for (auto& name : default_channel_schema())
    if (name != "mx" && name != "my" && name != "mz") keep.push_back(std::move(name));
  return keep;
}

struct PreprocConfig {
  std::vector<std::string> keep_channels = default_keep_channels();
  std::vector<std::string> gyro_channels = {"gx", "gy", "gz"};
  std::size_t target_length = 256;
  bool apply_log = true;
  std::optional<CalibrationTable> calibration;

  void validate() const {
    if (keep_channels.empty()) throw config_error("preprocess: keep_channels is empty");
    if (target_length == 0) throw config_error("preprocess: target_length must be positive");
    for (const auto& g : gyro_channels) {
      bool kept = false;
      for (const auto& k : keep_channels) kept = kept || k == g;
      if (!kept)
        throw config_error("preprocess: gyro channel '" + g + "' not in keep_channels");
    }
  }
};

template <typename T>
struct ProcessedSample {
  Tensor<T> data;  // [C, target_length]
  int label_index = 0;
  std::string writer_id;
};

inline RawSample apply_calibration(const RawSample& raw, const CalibrationTable& calib) {
  RawSample out = raw;
  for (std::size_t c = 0; c < out.channels.size(); ++c) {
    const Calibration cal = calib.lookup(out.channel_names[c]);
    if (cal.scale == 0.0)
      throw config_error("calibration: channel '" + out.channel_names[c] + "' has zero scale");
    for (double& v : out.channels[c]) v = (v - cal.bias) * cal.scale;
  }
  return out;
}

inline std::vector<double> deg_to_rad(const std::vector<double>& series) {
  constexpr double kDegToRad = 3.14159265358979323846 / 180.0;
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) out[i] = series[i] * kDegToRad;
  return out;
}

inline std::vector<double> signed_log(const std::vector<double>& series) {
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double v = series[i];
    out[i] = v < 0 ? -std::log1p(-v) : std::log1p(v);
  }
  return out;
}

// Length change via the frequency domain: full DFT, move bins by signed
// frequency, inverse transform with the *source* length normalization so a
// constant maps to the same constant. O(N^2 + T^2) with exact modular twiddle
// indexing; recording lengths are a few hundred ticks, so this is plenty.
inline std::vector<double> fourier_resample(const std::vector<double>& series, std::size_t target) {
  const std::size_t n = series.size();
  const std::size_t t = target;
  if (n < 2) throw config_error("fourier_resample: input length must be >= 2");
  if (t < 2) throw config_error("fourier_resample: target length must be >= 2");

  using cd = std::complex<double>;
  constexpr double kTwoPi = 2.0 * 3.14159265358979323846;

  std::vector<cd> fwd_tw(n);
  for (std::size_t m = 0; m < n; ++m) {
    const double ang = -kTwoPi * static_cast<double>(m) / static_cast<double>(n);
    fwd_tw[m] = cd(std::cos(ang), std::sin(ang));
  }
  std::vector<cd> spectrum(n);
  for (std::size_t k = 0; k < n; ++k) {
    cd acc(0.0, 0.0);
    for (std::size_t i = 0; i < n; ++i) acc += series[i] * fwd_tw[(k * i) % n];
    spectrum[k] = acc;
  }

  // Redistribute bins. A bin at signed frequency f survives when |2f| < T;
  // the Nyquist bin is split in two when upsampling across it and the two
  // half-bins merge back when landing exactly on the target Nyquist.
  std::vector<cd> shifted(t, cd(0.0, 0.0));
  const bool n_even = n % 2 == 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (n_even && k == n / 2) {
      if (t > n) {
        shifted[n / 2] += 0.5 * spectrum[k];
        shifted[t - n / 2] += 0.5 * spectrum[k];
      } else if (t == n) {
        shifted[k] += spectrum[k];
      }
      continue;
    }
    const long f = 2 * k < n ? static_cast<long>(k) : static_cast<long>(k) - static_cast<long>(n);
    const long abs2 = 2 * (f < 0 ? -f : f);
    if (abs2 < static_cast<long>(t)) {
      shifted[f >= 0 ? static_cast<std::size_t>(f) : t - static_cast<std::size_t>(-f)] +=
          spectrum[k];
    } else if (abs2 == static_cast<long>(t)) {
      shifted[t / 2] += spectrum[k];
    }
  }

  std::vector<cd> inv_tw(t);
  for (std::size_t m = 0; m < t; ++m) {
    const double ang = kTwoPi * static_cast<double>(m) / static_cast<double>(t);
    inv_tw[m] = cd(std::cos(ang), std::sin(ang));
  }
  std::vector<double> out(t);
  const double norm = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < t; ++i) {
    cd acc(0.0, 0.0);
    for (std::size_t k = 0; k < t; ++k) acc += shifted[k] * inv_tw[(k * i) % t];
    out[i] = acc.real() * norm;  // imaginary residue is rounding noise by construction
  }
  return out;
}

// Channel pipeline without the label plumbing; predict-style entry point.
template <typename T>
Tensor<T> preprocess_channels(const RawSample& raw, const PreprocConfig& config) {
  config.validate();
  if (raw.channel_names.size() != raw.channels.size())
    throw config_error("raw sample: name/series count mismatch");
  if (raw.length() < 2)
    throw config_error("raw sample: need at least 2 ticks, got " + std::to_string(raw.length()));

  const RawSample calibrated =
      config.calibration ? apply_calibration(raw, *config.calibration) : raw;

  auto is_gyro = [&](const std::string& name) {
    for (const auto& g : config.gyro_channels)
      if (g == name) return true;
    return false;
  };

  Tensor<T> data({config.keep_channels.size(), config.target_length});
  for (std::size_t c = 0; c < config.keep_channels.size(); ++c) {
    const auto& name = config.keep_channels[c];
    const std::vector<double>* series = calibrated.find(name);
    if (series == nullptr) throw config_error("preprocess: sample is missing channel '" + name + "'");

    std::vector<double> work = is_gyro(name) ? deg_to_rad(*series) : *series;
    work = fourier_resample(work, config.target_length);
    if (config.apply_log) work = signed_log(work);

    for (std::size_t i = 0; i < config.target_length; ++i) {
      const double v = work[i];
      if (!std::isfinite(v))
        throw numeric_error("preprocess: non-finite value in channel '" + name + "'");
      data[c * config.target_length + i] = static_cast<T>(v);
    }
  }
  return data;
}

template <typename T>
ProcessedSample<T> preprocess(const RawSample& raw, const PreprocConfig& config) {
  raw.validate();
  ProcessedSample<T> out;
  out.data = preprocess_channels<T>(raw, config);
  out.label_index = LabelMap::index_of(raw.label);
  out.writer_id = raw.writer_id;
  return out;
}

// Sample files: header row of channel names, then one row per 100 Hz tick.
inline RawSample load_sample_csv(const std::string& path) {
  const auto rows = read_csv(path);
  if (rows.empty()) throw config_error(path + ": empty sample file");
  RawSample raw;
  raw.channel_names = rows.front();
  const std::size_t cols = raw.channel_names.size();
  if (cols == 0) throw config_error(path + ": header row has no channels");
  raw.channels.assign(cols, {});
  for (auto& series : raw.channels) series.reserve(rows.size() - 1);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != cols)
      throw config_error(path + ": row " + std::to_string(r + 1) + " has " +
                         std::to_string(rows[r].size()) + " fields, expected " +
                         std::to_string(cols));
    for (std::size_t c = 0; c < cols; ++c) {
      try {
        raw.channels[c].push_back(parse_double(rows[r][c], raw.channel_names[c]));
      } catch (const config_error& e) {
        throw config_error(path + ": row " + std::to_string(r + 1) + ": " + e.what());
      }
    }
  }
  return raw;
}

inline void write_sample_csv(const std::string& path, const RawSample& raw) {
  if (raw.channel_names.size() != raw.channels.size())
    throw config_error("raw sample: name/series count mismatch");
  CsvWriter writer(path);
  writer.row(raw.channel_names);
  std::vector<std::string> fields(raw.channel_names.size());
  for (std::size_t i = 0; i < raw.length(); ++i) {
    for (std::size_t c = 0; c < raw.channels.size(); ++c) fields[c] = fmt_double(raw.channels[c][i]);
    writer.row(fields);
  }
  writer.flush();
}

}  // namespace scrawl
