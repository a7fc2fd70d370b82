#pragma once

// Training harness: Adam with classical (coupled) L2 weight decay, the
// epoch loop with metric logging and periodic checkpoints, evaluation with a
// confusion matrix, and the checkpoint file format.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "scrawl/common.hpp"
#include "scrawl/csv.hpp"
#include "scrawl/dataset.hpp"
#include "scrawl/layers.hpp"
#include "scrawl/tensor.hpp"

namespace scrawl {

struct AdamConfig {
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;

  void validate() const {
    if (lr < 0) throw config_error("adam: lr must be >= 0");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
      throw config_error("adam: betas must lie in [0,1)");
    if (eps <= 0) throw config_error("adam: eps must be positive");
    if (weight_decay < 0) throw config_error("adam: weight_decay must be >= 0");
  }
};

// Moments live beside the model, one flat buffer per parameter tensor.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  long t = 0;
};

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

// One update. Decay couples into the gradient before the moment updates
// (classical Adam-with-L2, not the decoupled variant); inner arithmetic runs
// in double whatever the parameter type.
template <typename T>
void adam_step(NamedParams<T>& params, AdamState<T>& state, const AdamConfig& config) {
  config.validate();
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].second.numel(), T(0));
      state.v[i].assign(params[i].second.numel(), T(0));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw config_error("adam: state tracks " + std::to_string(state.m.size()) +
                       " tensors, model has " + std::to_string(params.size()));

  state.t += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, param] = params[i];
    if (!param.requires_grad())
      throw config_error("adam: parameter '" + name + "' has no gradient buffer");
    if (state.m[i].size() != param.numel())
      throw config_error("adam: moment shape drifted for '" + name + "'");
    T* p = param.data();
    const T* g = param.grad();
    for (std::size_t j = 0; j < param.numel(); ++j) {
      const double raw = static_cast<double>(g[j]);
      if (!std::isfinite(raw))
        throw numeric_error("adam: non-finite gradient in '" + name + "' at element " +
                            std::to_string(j));
      const double grad = raw + config.weight_decay * static_cast<double>(p[j]);
      const double m = config.beta1 * static_cast<double>(state.m[i][j]) +
                       (1.0 - config.beta1) * grad;
      const double v = config.beta2 * static_cast<double>(state.v[i][j]) +
                       (1.0 - config.beta2) * grad * grad;
      state.m[i][j] = static_cast<T>(m);
      state.v[i][j] = static_cast<T>(v);
      const double step = config.lr * (m / bc1) / (std::sqrt(v / bc2) + config.eps);
      p[j] = static_cast<T>(static_cast<double>(p[j]) - step);
    }
  }
}

template <typename T>
void zero_grads(NamedParams<T>& params) {
  for (auto& [name, param] : params) param.zero_grad();
}

struct TrainConfig {
  std::size_t epochs = 500;
  std::size_t batch_size = 64;
  unsigned long long seed = 0;
  std::size_t checkpoint_every = 50;
  std::size_t eval_every = 1;

  void validate() const {
    if (epochs == 0 || batch_size == 0 || checkpoint_every == 0 || eval_every == 0)
      throw config_error("train: epochs, batch_size, checkpoint_every, eval_every must be >= 1");
  }
};

class ConfusionMatrix {
 public:
  ConfusionMatrix() : counts_(static_cast<std::size_t>(k_) * k_, 0) {}

  void add(int truth, int predicted) {
    if (truth < 0 || truth >= k_ || predicted < 0 || predicted >= k_)
      throw config_error("confusion: class index out of range");
    counts_[static_cast<std::size_t>(truth) * k_ + predicted] += 1;
  }
  long long at(int truth, int predicted) const {
    return counts_[static_cast<std::size_t>(truth) * k_ + predicted];
  }
  long long total() const {
    long long n = 0;
    for (long long c : counts_) n += c;
    return n;
  }
  long long row_sum(int truth) const {
    long long n = 0;
    for (int p = 0; p < k_; ++p) n += at(truth, p);
    return n;
  }
  double accuracy() const {
    const long long n = total();
    if (n == 0) return 0.0;
    long long diag = 0;
    for (int k = 0; k < k_; ++k) diag += at(k, k);
    return static_cast<double>(diag) / static_cast<double>(n);
  }

  // Header row of the 52 labels, then 52 rows of counts (row = true class).
  void write_csv(const std::string& path) const {
    CsvWriter out(path);
    std::vector<std::string> header;
    for (char c : LabelMap::labels()) header.emplace_back(1, c);
    out.row(header);
    for (int t = 0; t < k_; ++t) {
      std::vector<std::string> row;
      for (int p = 0; p < k_; ++p) row.push_back(std::to_string(at(t, p)));
      out.row(row);
    }
    out.flush();
  }

 private:
  static constexpr int k_ = LabelMap::kClassCount;
  std::vector<long long> counts_;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  ConfusionMatrix confusion;
};

namespace detail {

inline int argmax_row(const float* row, std::size_t n) {
  int best = 0;
  for (std::size_t j = 1; j < n; ++j)
    if (row[j] > row[best]) best = static_cast<int>(j);
  return best;
}
inline int argmax_row(const double* row, std::size_t n) {
  int best = 0;
  for (std::size_t j = 1; j < n; ++j)
    if (row[j] > row[best]) best = static_cast<int>(j);
  return best;
}

}  // namespace detail

// Eval-mode pass: per-sample loss mean, first-index-wins argmax, confusion
// counts. Batch composition cannot influence per-sample results in eval mode,
// so the numbers depend only on the sample set.
template <typename T>
EvalResult evaluate(Model<T>& model, const std::vector<Batch<T>>& batches) {
  if (batches.empty()) throw config_error("evaluate: no batches");
  model.set_mode(Mode::eval);
  EvalResult result;
  double loss_sum = 0.0;
  long long correct = 0, total = 0;
  for (const auto& batch : batches) {
    Tape<T> tape(false);
    auto logits = model.forward(tape, batch.input);
    auto loss = cross_entropy(tape, logits, batch.labels);
    const std::size_t b = batch.input.shape()[0];
    const std::size_t classes = logits.shape()[1];
    loss_sum += static_cast<double>(loss.item()) * static_cast<double>(b);
    for (std::size_t r = 0; r < b; ++r) {
      const int pred = detail::argmax_row(logits.data() + r * classes, classes);
      result.confusion.add(batch.labels[r], pred);
      correct += pred == batch.labels[r] ? 1 : 0;
      total += 1;
    }
  }
  result.loss = loss_sum / static_cast<double>(total);
  result.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  return result;
}

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

// One pass over the batches: forward, loss, backward, Adam, gradient reset.
// The returned statistics are gathered on the fly (pre-update logits).
template <typename T>
EpochStats train_epoch(Model<T>& model, const std::vector<Batch<T>>& batches,
                       AdamState<T>& state, const AdamConfig& config) {
  if (batches.empty()) throw config_error("train_epoch: no batches");
  model.set_mode(Mode::train);
  auto params = model.parameters();
  double loss_sum = 0.0;
  long long correct = 0, total = 0;
  for (const auto& batch : batches) {
    Tape<T> tape;
    auto logits = model.forward(tape, batch.input);
    auto loss = cross_entropy(tape, logits, batch.labels);
    const double batch_loss = static_cast<double>(loss.item());
    if (!std::isfinite(batch_loss)) throw numeric_error("train_epoch: non-finite training loss");
    const std::size_t b = batch.input.shape()[0];
    const std::size_t classes = logits.shape()[1];
    loss_sum += batch_loss * static_cast<double>(b);
    for (std::size_t r = 0; r < b; ++r) {
      correct += detail::argmax_row(logits.data() + r * classes, classes) == batch.labels[r] ? 1 : 0;
      total += 1;
    }
    tape.backward(loss);
    adam_step(params, state, config);
    zero_grads(params);
  }
  return {loss_sum / static_cast<double>(total),
          static_cast<double>(correct) / static_cast<double>(total)};
}

struct MetricsRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  bool has_test = false;
  double test_loss = 0.0;
  double test_acc = 0.0;
};

inline std::vector<std::string> metrics_header() {
  return {"epoch", "train_loss", "train_acc", "test_loss", "test_acc"};
}

inline std::vector<std::string> metrics_fields(const MetricsRow& row) {
  return {std::to_string(row.epoch), fmt_double(row.train_loss), fmt_double(row.train_acc),
          row.has_test ? fmt_double(row.test_loss) : std::string(),
          row.has_test ? fmt_double(row.test_acc) : std::string()};
}

// ---------------------------------------------------------------------------
// Checkpoints. Text header, then the model state as little-endian f32, then a
// CRC-32 of the payload:
//
//   scrawl-ckpt v1
//   digest <16 hex digits of the model spec>
//   tensor <name> <d0>x<d1>... <byte offset>
//   ...
//   payload <byte count>
//   <f32 data><4-byte CRC, little endian>
//
// The payload is always f32; an f64 model narrows on save and widens on load,
// so only f32 models round-trip bit-exactly.

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint32_t float_bits(float f) {
  std::uint32_t bits;
  static_assert(sizeof bits == sizeof f);
  std::memcpy(&bits, &f, sizeof bits);
  return bits;
}

inline float bits_float(std::uint32_t bits) {
  float f;
  std::memcpy(&f, &bits, sizeof f);
  return f;
}

inline std::string digest_hex(std::uint64_t digest) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(digest));
  return buf;
}

}  // namespace detail

template <typename T>
void checkpoint_save(Model<T>& model, const std::string& path) {
  auto state = model.state();
  std::string header = "scrawl-ckpt v1\n";
  header += "digest " + detail::digest_hex(model.spec().digest()) + "\n";
  std::size_t offset = 0;
  for (auto& [name, tensor] : state) {
    header += "tensor " + name + " ";
    const auto& shape = tensor.shape();
    for (std::size_t d = 0; d < shape.size(); ++d)
      header += (d ? "x" : "") + std::to_string(shape[d]);
    header += " " + std::to_string(offset) + "\n";
    offset += tensor.numel() * 4;
  }
  header += "payload " + std::to_string(offset) + "\n";

  std::string payload;
  payload.reserve(offset);
  for (auto& [name, tensor] : state)
    for (std::size_t i = 0; i < tensor.numel(); ++i)
      detail::put_u32_le(payload, detail::float_bits(static_cast<float>(tensor[i])));
  const std::uint32_t crc = crc32(payload.data(), payload.size());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error(path + ": cannot open for writing");
  out << header << payload;
  std::string trailer;
  detail::put_u32_le(trailer, crc);
  out << trailer;
  out.flush();
  if (!out) throw io_error(path + ": write failed");
}

template <typename T>
void checkpoint_load(Model<T>& model, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error(path + ": cannot open checkpoint");
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  auto next_line = [&](std::size_t& pos) {
    const auto nl = content.find('\n', pos);
    if (nl == std::string::npos) throw io_error(path + ": truncated header");
    std::string line = content.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };

  std::size_t pos = 0;
  if (next_line(pos) != "scrawl-ckpt v1") throw io_error(path + ": not a checkpoint file");
  const std::string digest_line = next_line(pos);
  if (digest_line.rfind("digest ", 0) != 0) throw io_error(path + ": missing digest line");
  const std::string want = detail::digest_hex(model.spec().digest());
  const std::string have = digest_line.substr(7);
  if (have != want)
    throw spec_mismatch_error(path + ": checkpoint digest " + have +
                              " does not match model spec digest " + want);

  auto state = model.state();
  std::size_t expect_offset = 0;
  std::vector<std::string> tensor_lines;
  std::string line;
  while ((line = next_line(pos)).rfind("tensor ", 0) == 0) tensor_lines.push_back(line);
  if (tensor_lines.size() != state.size())
    throw spec_mismatch_error(path + ": checkpoint carries " +
                              std::to_string(tensor_lines.size()) + " tensors, model has " +
                              std::to_string(state.size()));
  for (std::size_t i = 0; i < state.size(); ++i) {
    auto& [name, tensor] = state[i];
    std::string shape_text;
    const auto& shape = tensor.shape();
    for (std::size_t d = 0; d < shape.size(); ++d)
      shape_text += (d ? "x" : "") + std::to_string(shape[d]);
    const std::string expect =
        "tensor " + name + " " + shape_text + " " + std::to_string(expect_offset);
    if (tensor_lines[i] != expect)
      throw spec_mismatch_error(path + ": tensor mismatch: have '" + tensor_lines[i] +
                                "', expected '" + expect + "'");
    expect_offset += tensor.numel() * 4;
  }

  if (line.rfind("payload ", 0) != 0) throw io_error(path + ": missing payload line");
  std::size_t payload_bytes = 0;
  try {
    payload_bytes = static_cast<std::size_t>(parse_long(line.substr(8), "payload size"));
  } catch (const config_error& e) {
    throw io_error(path + ": " + e.what());
  }
  if (payload_bytes != expect_offset)
    throw spec_mismatch_error(path + ": payload size " + std::to_string(payload_bytes) +
                              ", expected " + std::to_string(expect_offset));
  if (content.size() < pos + payload_bytes + 4)
    throw io_error(path + ": truncated payload (" + std::to_string(content.size() - pos) +
                   " of " + std::to_string(payload_bytes + 4) + " bytes)");
  if (content.size() > pos + payload_bytes + 4)
    throw io_error(path + ": trailing bytes after checksum");

  const char* payload = content.data() + pos;
  const auto* bytes = reinterpret_cast<const unsigned char*>(payload);
  const std::uint32_t stored_crc = detail::get_u32_le(bytes + payload_bytes);
  if (crc32(payload, payload_bytes) != stored_crc)
    throw io_error(path + ": checksum failure, file is corrupt");

  std::size_t cursor = 0;
  for (auto& [name, tensor] : state)
    for (std::size_t i = 0; i < tensor.numel(); ++i, cursor += 4)
      tensor[i] = static_cast<T>(detail::bits_float(detail::get_u32_le(bytes + cursor)));
}

template <typename T>
Model<T> checkpoint_load(const std::string& path, const ModelSpec& spec) {
  Model<T> model(spec, 0);
  checkpoint_load(model, path);
  return model;
}

// ---------------------------------------------------------------------------

struct FitOutcome {
  std::vector<MetricsRow> metrics;
  ConfusionMatrix test_confusion;  // last test evaluation, if any
  bool has_test = false;
};

// The full loop. The logged train metrics come from a post-epoch eval-mode
// pass so that evaluating the final checkpoint on the train set reproduces the
// last row exactly; the on-the-fly train_epoch numbers only feed the log
// callback. An empty out_dir suppresses all file output; test_set may be
// empty (retrain-on-everything mode).
template <typename T>
FitOutcome fit(Model<T>& model, const std::vector<ProcessedSample<T>>& train_set,
               const std::vector<ProcessedSample<T>>& test_set, const TrainConfig& tc,
               const AdamConfig& ac, const std::string& out_dir = "",
               const std::function<void(const std::string&)>& log = {}) {
  tc.validate();
  ac.validate();
  if (train_set.empty()) throw config_error("fit: empty training set");

  namespace fs = std::filesystem;
  std::optional<CsvWriter> metrics_csv;
  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw io_error(out_dir + ": cannot create output directory: " + ec.message());
    metrics_csv.emplace((fs::path(out_dir) / "metrics.csv").string());
    metrics_csv->row(metrics_header());
  }

  const std::vector<Batch<T>> test_batches =
      test_set.empty() ? std::vector<Batch<T>>{}
                       : make_batches(test_set, tc.batch_size, mix_seed(tc.seed, 7));

  AdamState<T> state;
  FitOutcome outcome;
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto batches = make_batches(train_set, tc.batch_size, mix_seed(tc.seed, 11, epoch));
    const EpochStats live = train_epoch(model, batches, state, ac);

    MetricsRow row;
    row.epoch = epoch;
    const EvalResult train_eval = evaluate(model, batches);
    row.train_loss = train_eval.loss;
    row.train_acc = train_eval.accuracy;
    if (!test_batches.empty() && epoch % tc.eval_every == 0) {
      const EvalResult test_eval = evaluate(model, test_batches);
      row.has_test = true;
      row.test_loss = test_eval.loss;
      row.test_acc = test_eval.accuracy;
      outcome.test_confusion = test_eval.confusion;
      outcome.has_test = true;
    }
    model.set_mode(Mode::train);
    outcome.metrics.push_back(row);

    if (metrics_csv) {
      metrics_csv->row(metrics_fields(row));
      metrics_csv->flush();
    }
    if (log) {
      std::string msg = "epoch " + std::to_string(epoch) + " train_loss " +
                        fmt_double(row.train_loss) + " train_acc " + fmt_double(row.train_acc) +
                        " (live " + fmt_double(live.loss) + "/" + fmt_double(live.accuracy) + ")";
      if (row.has_test)
        msg += " test_loss " + fmt_double(row.test_loss) + " test_acc " + fmt_double(row.test_acc);
      log(msg);
    }
    if (!out_dir.empty() && epoch % tc.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "ckpt_epoch_%04zu.ckpt", epoch);
      checkpoint_save(model, (fs::path(out_dir) / name).string());
    }
  }

  if (!out_dir.empty()) {
    checkpoint_save(model, (fs::path(out_dir) / "model_final.ckpt").string());
    if (outcome.has_test)
      outcome.test_confusion.write_csv((fs::path(out_dir) / "confusion_matrix.csv").string());
  }
  return outcome;
}

}  // namespace scrawl
