#pragma once

// Manifest-driven ingestion, writer-exclusive splitting, batching, and a
// synthetic recording generator used for desk-scale experiments.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "scrawl/common.hpp"
#include "scrawl/csv.hpp"
#include "scrawl/preprocess.hpp"
#include "scrawl/tensor.hpp"

namespace scrawl {

struct ManifestEntry {
  std::string sample_path;
  char label = 'a';
  std::string writer_id;
};

// CSV with header `sample_path,label,writer_id`. Relative sample paths are
// resolved against the manifest's own directory so a dataset folder can move
// as a unit.
inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
  const auto rows = read_csv(path);
  if (rows.empty() || rows.front() != std::vector<std::string>{"sample_path", "label", "writer_id"})
    throw config_error(path + ": expected header 'sample_path,label,writer_id'");
  const std::filesystem::path base = std::filesystem::path(path).parent_path();

  std::vector<ManifestEntry> entries;
  entries.reserve(rows.size() - 1);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != 3)
      throw config_error(path + ": row " + std::to_string(r + 1) + " has " +
                         std::to_string(row.size()) + " fields, expected 3");
    if (row[0].empty()) throw config_error(path + ": row " + std::to_string(r + 1) + ": empty path");
    if (row[1].size() != 1 || !LabelMap::valid(row[1][0]))
      throw config_error(path + ": row " + std::to_string(r + 1) + ": unknown label '" + row[1] +
                         "'");
    ManifestEntry entry;
    const std::filesystem::path p(row[0]);
    entry.sample_path = p.is_absolute() ? p.string() : (base / p).string();
    entry.label = row[1][0];
    entry.writer_id = row[2];
    entries.push_back(std::move(entry));
  }
  return entries;
}

// Reads the sample file behind a manifest entry and stamps label and writer.
inline RawSample load_raw(const ManifestEntry& entry) {
  RawSample raw = load_sample_csv(entry.sample_path);
  raw.label = entry.label;
  raw.writer_id = entry.writer_id;
  return raw;
}

struct SplitConfig {
  double train_fraction = 0.8;
  unsigned long long seed = 0;

  void validate() const {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
      throw config_error("split: train_fraction must lie in (0,1), got " +
                         std::to_string(train_fraction));
  }
};

// Writers never straddle the split: all of a writer's samples travel to one
// side. Writer order is sorted before shuffling so the partition depends only
// on the seed, not on manifest row order.
inline std::pair<std::vector<ManifestEntry>, std::vector<ManifestEntry>> writer_exclusive_split(
    const std::vector<ManifestEntry>& entries, const SplitConfig& config) {
  config.validate();
  std::vector<std::string> writers;
  for (const auto& e : entries) writers.push_back(e.writer_id);
  std::sort(writers.begin(), writers.end());
  writers.erase(std::unique(writers.begin(), writers.end()), writers.end());
  if (writers.size() < 2)
    throw config_error("split: need at least 2 distinct writers, got " +
                       std::to_string(writers.size()));

  Rng rng(config.seed);
  rng.shuffle(writers);
  const double exact = config.train_fraction * static_cast<double>(writers.size());
  std::size_t n_train = static_cast<std::size_t>(std::llround(exact));
  n_train = std::clamp<std::size_t>(n_train, 1, writers.size() - 1);

  std::vector<bool> in_train_of(writers.size());
  auto side_of = [&](const std::string& w) {
    for (std::size_t i = 0; i < writers.size(); ++i)
      if (writers[i] == w) return i < n_train;
    return false;  // unreachable: every entry's writer is in the list
  };
  std::pair<std::vector<ManifestEntry>, std::vector<ManifestEntry>> split;
  for (const auto& e : entries)
    (side_of(e.writer_id) ? split.first : split.second).push_back(e);
  return split;
}

template <typename T>
struct Batch {
  Tensor<T> input;          // [B, C, L]
  std::vector<int> labels;  // length B
};

// Deterministic shuffle, partial final batch kept so every sample counts once.
template <typename T>
std::vector<Batch<T>> make_batches(const std::vector<ProcessedSample<T>>& samples,
                                   std::size_t batch_size, unsigned long long shuffle_seed) {
  if (samples.empty()) throw config_error("batching: no samples");
  if (batch_size == 0) throw config_error("batching: batch_size must be >= 1");
  const Shape item_shape = samples.front().data.shape();
  if (item_shape.size() != 2) throw config_error("batching: samples must be rank 2 [C, L]");
  for (const auto& s : samples)
    if (s.data.shape() != item_shape)
      throw config_error("batching: mixed sample shapes " + shape_str(s.data.shape()) + " vs " +
                         shape_str(item_shape));

  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(shuffle_seed);
  rng.shuffle(order);

  const std::size_t stride = item_shape[0] * item_shape[1];
  std::vector<Batch<T>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t b = std::min(batch_size, order.size() - start);
    Batch<T> batch{Tensor<T>({b, item_shape[0], item_shape[1]}), {}};
    batch.labels.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
      const auto& sample = samples[order[start + i]];
      const auto& src = sample.data.values();
      std::copy(src.begin(), src.end(), batch.input.values().begin() + i * stride);
      batch.labels.push_back(sample.label_index);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

struct SynthConfig {
  std::size_t n_writers = 5;
  std::size_t samples_per_class_per_writer = 2;
  std::size_t channels = 15;
  std::size_t length = 256;
  unsigned long long seed = 0;
  double noise_rms_fraction = 0.10;  // 0 turns noise off

  void validate() const {
    if (n_writers == 0 || samples_per_class_per_writer == 0 || channels == 0 || length < 2)
      throw config_error("synth: writers, samples per class, channels must be >= 1; length >= 2");
    if (noise_rms_fraction < 0) throw config_error("synth: noise fraction must be >= 0");
  }
};

struct SynthData {
  std::vector<RawSample> samples;
  std::vector<ManifestEntry> manifest;  // paths relative to the dataset root
};

// First channels take the real recorder names so the default preprocessing
// config applies to synthetic data unchanged.
inline std::vector<std::string> synth_channel_names(std::size_t channels) {
  std::vector<std::string> names = default_channel_schema();
  while (names.size() < channels) names.push_back("extra" + std::to_string(names.size()));
  names.resize(channels);
  return names;
}

namespace detail {

struct SynthSignature {
  double freq, phase, amp;
};

}  // namespace detail

// Every class carries a fixed per-channel sinusoid signature; writers modulate
// it with a gain and a slow drift curve; each sample adds white noise and a
// length jitter of +-25%. All randomness derives from the one seed.
inline SynthData synth_generate(const SynthConfig& config) {
  config.validate();
  constexpr double kTwoPi = 2.0 * 3.14159265358979323846;
  const std::size_t classes = LabelMap::kClassCount;

  std::vector<std::vector<detail::SynthSignature>> class_sig(classes);
  for (std::size_t k = 0; k < classes; ++k) {
    Rng rng(mix_seed(config.seed, 1, k));
    class_sig[k].resize(config.channels);
    for (auto& sig : class_sig[k]) {
      sig.freq = rng.uniform(1.0, 8.0);
      sig.phase = rng.uniform(0.0, kTwoPi);
      sig.amp = rng.uniform(0.5, 2.0);
    }
  }

  struct WriterTone {
    double gain, drift_amp, drift_freq, drift_phase;
  };
  std::vector<std::vector<WriterTone>> writer_tone(config.n_writers);
  for (std::size_t w = 0; w < config.n_writers; ++w) {
    Rng rng(mix_seed(config.seed, 2, w));
    writer_tone[w].resize(config.channels);
    for (auto& tone : writer_tone[w]) {
      tone.gain = rng.uniform(0.8, 1.25);
      tone.drift_amp = rng.uniform(0.0, 0.3);
      tone.drift_freq = rng.uniform(0.25, 1.0);
      tone.drift_phase = rng.uniform(0.0, kTwoPi);
    }
  }

  SynthData data;
  const auto names = synth_channel_names(config.channels);
  std::size_t index = 0;
  for (std::size_t w = 0; w < config.n_writers; ++w) {
    char writer_name[24];
    std::snprintf(writer_name, sizeof writer_name, "w%03zu", w);
    for (std::size_t k = 0; k < classes; ++k) {
      for (std::size_t rep = 0; rep < config.samples_per_class_per_writer; ++rep, ++index) {
        Rng rng(mix_seed(config.seed, 3, index));
        const double jitter = rng.uniform(-0.25, 0.25);
        const std::size_t len = std::max<std::size_t>(
            2, static_cast<std::size_t>(std::llround(static_cast<double>(config.length) *
                                                     (1.0 + jitter))));

        RawSample raw;
        raw.channel_names = names;
        raw.writer_id = writer_name;
        raw.label = LabelMap::label_at(static_cast<int>(k));
        raw.channels.resize(config.channels);
        for (std::size_t c = 0; c < config.channels; ++c) {
          const auto& sig = class_sig[k][c];
          const auto& tone = writer_tone[w][c];
          auto& series = raw.channels[c];
          series.resize(len);
          double sum_sq = 0.0;
          for (std::size_t n = 0; n < len; ++n) {
            const double u = static_cast<double>(n) / static_cast<double>(len);
            const double v = tone.gain * sig.amp * std::sin(kTwoPi * sig.freq * u + sig.phase) +
                             tone.drift_amp * std::sin(kTwoPi * tone.drift_freq * u + tone.drift_phase);
            series[n] = v;
            sum_sq += v * v;
          }
          if (config.noise_rms_fraction > 0.0) {
            const double rms = std::sqrt(sum_sq / static_cast<double>(len));
            const double sigma = config.noise_rms_fraction * rms;
            for (auto& v : series) v += sigma * rng.normal();
          }
        }

        char file_name[32];
        std::snprintf(file_name, sizeof file_name, "samples/s%05zu.csv", index);
        data.manifest.push_back({file_name, raw.label, raw.writer_id});
        data.samples.push_back(std::move(raw));
      }
    }
  }
  return data;
}

// Persists a generated dataset: sample files plus manifest.csv under `root`.
inline void write_synth_dataset(const std::string& root, const SynthData& data) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(root) / "samples", ec);
  if (ec) throw io_error(root + ": cannot create dataset directories: " + ec.message());

  for (std::size_t i = 0; i < data.samples.size(); ++i)
    write_sample_csv((fs::path(root) / data.manifest[i].sample_path).string(), data.samples[i]);

  CsvWriter writer((fs::path(root) / "manifest.csv").string());
  writer.row({"sample_path", "label", "writer_id"});
  for (const auto& entry : data.manifest)
    writer.row({entry.sample_path, std::string(1, entry.label), entry.writer_id});
  writer.flush();
}

}  // namespace scrawl
