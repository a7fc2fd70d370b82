// Command-line front end: synth / train / eval / predict / gradcheck.
//
// Every run snapshots its fully resolved configuration to
// <out-dir>/run_manifest.json before doing any real work, and --replay
// re-executes such a snapshot; outputs are reproducible byte for byte, with
// wall-clock timestamps confined to train.log.
//
// Exit codes: 0 success, 1 gradient-check breach (or unexpected internal
// error), 2 configuration/usage, 3 I/O, 4 numeric abort, 5 checkpoint/spec
// mismatch.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "scrawl/dataset.hpp"
#include "scrawl/gradcheck.hpp"
#include "scrawl/layers.hpp"
#include "scrawl/preprocess.hpp"
#include "scrawl/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scrawl;

namespace {

struct GlobalOptions {
  unsigned long long seed = 0;
  std::string out_dir = "out";
  std::string precision = "f32";
};

struct SynthOptions {
  std::size_t writers = 5;
  std::size_t per_class = 2;
  std::size_t channels = 15;
  std::size_t length = 256;
  double noise = 0.10;
};

// Flags shared by train/eval/predict; they must match between a training run
// and any later use of its checkpoint, or the spec digests disagree.
struct PreprocFlags {
  std::size_t target_length = 256;
  bool apply_log = true;
  std::string keep_channels;  // comma list; empty = default 12-channel list
  std::string gyro_channels = "gx,gy,gz";
  std::string calib;
};

struct ModelFlags {
  std::size_t hidden = 256;
  double width_scale = 1.0;
  std::string exp = "signed_inverse";
};

struct TrainOptions {
  std::string manifest;
  PreprocFlags pre;
  ModelFlags model;
  double train_fraction = 0.8;
  std::size_t epochs = 500;
  std::size_t batch_size = 64;
  std::size_t checkpoint_every = 50;
  std::size_t eval_every = 1;
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;
  std::size_t final_epoch = 0;  // 0 = keep the last epoch
};

struct EvalOptions {
  std::string checkpoint;
  std::string manifest;
  PreprocFlags pre;
  ModelFlags model;
  std::size_t batch_size = 64;
};

struct PredictOptions {
  std::string checkpoint;
  std::string sample;
  PreprocFlags pre;
  ModelFlags model;
};

struct GradcheckOptions {
  double scale = 1.0;
  std::size_t input_channels = 2;
  std::size_t input_length = 32;
  std::size_t batch = 2;
  double eps = 1e-5;
  std::string exp = "signed_inverse";
  bool inject_fault = false;
};

// --- small helpers ---------------------------------------------------------

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  for (char c : text) {
    if (c == ',') {
      if (!item.empty()) out.push_back(item);
      item.clear();
    } else {
      item.push_back(c);
    }
  }
  if (!item.empty()) out.push_back(item);
  return out;
}

ExpKind parse_exp_kind(const std::string& name) {
  if (name == "signed_inverse") return ExpKind::signed_inverse;
  if (name == "plain") return ExpKind::plain;
  throw config_error("unknown exp kind '" + name + "', expected signed_inverse or plain");
}

PreprocConfig build_preproc(const PreprocFlags& flags) {
  PreprocConfig config;
  if (!flags.keep_channels.empty()) config.keep_channels = split_list(flags.keep_channels);
  config.gyro_channels = split_list(flags.gyro_channels);
  config.target_length = flags.target_length;
  config.apply_log = flags.apply_log;
  if (!flags.calib.empty()) config.calibration = CalibrationTable::load_csv(flags.calib);
  config.validate();
  return config;
}

ModelSpec build_spec(const PreprocConfig& pre, const ModelFlags& flags) {
  return ModelSpec::net12(pre.keep_channels.size(), LabelMap::kClassCount, flags.hidden,
                          flags.width_scale, parse_exp_kind(flags.exp));
}

std::string now_stamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::tm tm_buf{};
  localtime_r(&t, &tm_buf);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm_buf);
  return buf;
}

void prepare_out_dir(const GlobalOptions& g) {
  std::error_code ec;
  fs::create_directories(g.out_dir, ec);
  if (ec || !fs::is_directory(g.out_dir))
    throw io_error(g.out_dir + ": cannot create output directory" +
                   (ec ? ": " + ec.message() : ""));
}

void write_run_manifest(const GlobalOptions& g, const std::string& command, const json& flags) {
  json m;
  m["command"] = command;
  m["seed"] = g.seed;
  m["out_dir"] = g.out_dir;
  m["precision"] = g.precision;
  m["flags"] = flags;
  const auto path = fs::path(g.out_dir) / "run_manifest.json";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error(path.string() + ": cannot write run manifest");
  out << m.dump(2) << "\n";
  out.flush();
  if (!out) throw io_error(path.string() + ": write failed");
}

// --- flag <-> json, keys spelled like the flags ----------------------------

json preproc_to_json(const PreprocFlags& f) {
  return {{"target_length", f.target_length},
          {"apply_log", f.apply_log},
          {"keep_channels", f.keep_channels},
          {"gyro_channels", f.gyro_channels},
          {"calib", f.calib}};
}

PreprocFlags preproc_from_json(const json& j) {
  PreprocFlags f;
  f.target_length = j.at("target_length").get<std::size_t>();
  f.apply_log = j.at("apply_log").get<bool>();
  f.keep_channels = j.at("keep_channels").get<std::string>();
  f.gyro_channels = j.at("gyro_channels").get<std::string>();
  f.calib = j.at("calib").get<std::string>();
  return f;
}

json model_to_json(const ModelFlags& f) {
  return {{"hidden", f.hidden}, {"width_scale", f.width_scale}, {"exp", f.exp}};
}

ModelFlags model_from_json(const json& j) {
  ModelFlags f;
  f.hidden = j.at("hidden").get<std::size_t>();
  f.width_scale = j.at("width_scale").get<double>();
  f.exp = j.at("exp").get<std::string>();
  return f;
}

json synth_to_json(const SynthOptions& o) {
  return {{"writers", o.writers},
          {"per_class", o.per_class},
          {"channels", o.channels},
          {"length", o.length},
          {"noise", o.noise}};
}

SynthOptions synth_from_json(const json& j) {
  SynthOptions o;
  o.writers = j.at("writers").get<std::size_t>();
  o.per_class = j.at("per_class").get<std::size_t>();
  o.channels = j.at("channels").get<std::size_t>();
  o.length = j.at("length").get<std::size_t>();
  o.noise = j.at("noise").get<double>();
  return o;
}

json train_to_json(const TrainOptions& o) {
  json j = {{"manifest", o.manifest},
            {"train_fraction", o.train_fraction},
            {"epochs", o.epochs},
            {"batch_size", o.batch_size},
            {"checkpoint_every", o.checkpoint_every},
            {"eval_every", o.eval_every},
            {"lr", o.lr},
            {"beta1", o.beta1},
            {"beta2", o.beta2},
            {"eps", o.eps},
            {"weight_decay", o.weight_decay},
            {"final_epoch", o.final_epoch}};
  j.update(preproc_to_json(o.pre));
  j.update(model_to_json(o.model));
  return j;
}

TrainOptions train_from_json(const json& j) {
  TrainOptions o;
  o.manifest = j.at("manifest").get<std::string>();
  o.pre = preproc_from_json(j);
  o.model = model_from_json(j);
  o.train_fraction = j.at("train_fraction").get<double>();
  o.epochs = j.at("epochs").get<std::size_t>();
  o.batch_size = j.at("batch_size").get<std::size_t>();
  o.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
  o.eval_every = j.at("eval_every").get<std::size_t>();
  o.lr = j.at("lr").get<double>();
  o.beta1 = j.at("beta1").get<double>();
  o.beta2 = j.at("beta2").get<double>();
  o.eps = j.at("eps").get<double>();
  o.weight_decay = j.at("weight_decay").get<double>();
  o.final_epoch = j.at("final_epoch").get<std::size_t>();
  return o;
}

json eval_to_json(const EvalOptions& o) {
  json j = {{"checkpoint", o.checkpoint}, {"manifest", o.manifest}, {"batch_size", o.batch_size}};
  j.update(preproc_to_json(o.pre));
  j.update(model_to_json(o.model));
  return j;
}

EvalOptions eval_from_json(const json& j) {
  EvalOptions o;
  o.checkpoint = j.at("checkpoint").get<std::string>();
  o.manifest = j.at("manifest").get<std::string>();
  o.batch_size = j.at("batch_size").get<std::size_t>();
  o.pre = preproc_from_json(j);
  o.model = model_from_json(j);
  return o;
}

json predict_to_json(const PredictOptions& o) {
  json j = {{"checkpoint", o.checkpoint}, {"sample", o.sample}};
  j.update(preproc_to_json(o.pre));
  j.update(model_to_json(o.model));
  return j;
}

PredictOptions predict_from_json(const json& j) {
  PredictOptions o;
  o.checkpoint = j.at("checkpoint").get<std::string>();
  o.sample = j.at("sample").get<std::string>();
  o.pre = preproc_from_json(j);
  o.model = model_from_json(j);
  return o;
}

json gradcheck_to_json(const GradcheckOptions& o) {
  return {{"scale", o.scale},          {"input_channels", o.input_channels},
          {"input_length", o.input_length}, {"batch", o.batch},
          {"eps", o.eps},              {"exp", o.exp},
          {"inject_fault", o.inject_fault}};
}

GradcheckOptions gradcheck_from_json(const json& j) {
  GradcheckOptions o;
  o.scale = j.at("scale").get<double>();
  o.input_channels = j.at("input_channels").get<std::size_t>();
  o.input_length = j.at("input_length").get<std::size_t>();
  o.batch = j.at("batch").get<std::size_t>();
  o.eps = j.at("eps").get<double>();
  o.exp = j.at("exp").get<std::string>();
  o.inject_fault = j.at("inject_fault").get<bool>();
  return o;
}

// --- subcommands -----------------------------------------------------------

int run_synth(const GlobalOptions& g, const SynthOptions& o) {
  prepare_out_dir(g);
  write_run_manifest(g, "synth", synth_to_json(o));

  SynthConfig config;
  config.n_writers = o.writers;
  config.samples_per_class_per_writer = o.per_class;
  config.channels = o.channels;
  config.length = o.length;
  config.seed = g.seed;
  config.noise_rms_fraction = o.noise;
  config.validate();

  const SynthData data = synth_generate(config);
  write_synth_dataset(g.out_dir, data);

  CsvWriter calib((fs::path(g.out_dir) / "calibration.csv").string());
  calib.row({"channel", "bias", "scale"});
  for (const auto& name : synth_channel_names(o.channels)) calib.row({name, "0", "1"});
  calib.flush();

  std::cout << "wrote " << data.samples.size() << " samples from " << o.writers << " writers to "
            << g.out_dir << "\n";
  return 0;
}

template <typename T>
std::vector<ProcessedSample<T>> load_side(const std::vector<ManifestEntry>& entries,
                                          const PreprocConfig& pre) {
  std::vector<ProcessedSample<T>> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(preprocess<T>(load_raw(e), pre));
  return out;
}

template <typename T>
int run_train(const GlobalOptions& g, const TrainOptions& o) {
  prepare_out_dir(g);
  write_run_manifest(g, "train", train_to_json(o));

  const PreprocConfig pre = build_preproc(o.pre);
  const ModelSpec spec = build_spec(pre, o.model);
  const auto entries = load_manifest(o.manifest);

  std::vector<ManifestEntry> train_entries, test_entries;
  if (o.train_fraction == 1.0) {
    train_entries = entries;  // retrain-on-everything mode
  } else {
    SplitConfig sc;
    sc.train_fraction = o.train_fraction;
    sc.seed = mix_seed(g.seed, 21);
    std::tie(train_entries, test_entries) = writer_exclusive_split(entries, sc);
  }

  const auto train_set = load_side<T>(train_entries, pre);
  const auto test_set = load_side<T>(test_entries, pre);

  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch_size;
  tc.seed = g.seed;
  tc.checkpoint_every = o.checkpoint_every;
  tc.eval_every = o.eval_every;
  AdamConfig ac;
  ac.lr = o.lr;
  ac.beta1 = o.beta1;
  ac.beta2 = o.beta2;
  ac.eps = o.eps;
  ac.weight_decay = o.weight_decay;

  const auto log_path = fs::path(g.out_dir) / "train.log";
  std::ofstream log_file(log_path, std::ios::trunc);
  if (!log_file) throw io_error(log_path.string() + ": cannot open log");
  auto log = [&](const std::string& msg) {
    log_file << "[" << now_stamp() << "] " << msg << "\n";
    log_file.flush();
    std::cout << msg << "\n";
  };
  char arch[24];
  std::snprintf(arch, sizeof arch, "%016llx", static_cast<unsigned long long>(spec.digest()));
  log("train " + std::to_string(train_set.size()) + " samples / test " +
      std::to_string(test_set.size()) + " samples, arch " + arch + ", precision " + g.precision);

  Model<T> model(spec, mix_seed(g.seed, 101));
  fit(model, train_set, test_set, tc, ac, g.out_dir, log);

  if (o.final_epoch > 0) {
    char name[48];
    std::snprintf(name, sizeof name, "ckpt_epoch_%04zu.ckpt", o.final_epoch);
    const fs::path src = fs::path(g.out_dir) / name;
    if (!fs::exists(src))
      throw config_error("final_epoch " + std::to_string(o.final_epoch) +
                         " has no checkpoint (cadence " + std::to_string(o.checkpoint_every) +
                         ", " + std::to_string(o.epochs) + " epochs)");
    fs::copy_file(src, fs::path(g.out_dir) / "model_final.ckpt",
                  fs::copy_options::overwrite_existing);
    log(std::string("model_final.ckpt now holds ") + name);
  }
  std::cout << "wrote " << (fs::path(g.out_dir) / "model_final.ckpt").string() << "\n";
  return 0;
}

template <typename T>
int run_eval(const GlobalOptions& g, const EvalOptions& o) {
  prepare_out_dir(g);
  write_run_manifest(g, "eval", eval_to_json(o));

  const PreprocConfig pre = build_preproc(o.pre);
  const ModelSpec spec = build_spec(pre, o.model);
  Model<T> model = checkpoint_load<T>(o.checkpoint, spec);

  const auto entries = load_manifest(o.manifest);
  const auto samples = load_side<T>(entries, pre);
  const auto batches = make_batches(samples, o.batch_size, mix_seed(g.seed, 7));
  const EvalResult result = evaluate(model, batches);

  std::cout << "loss " << fmt_double(result.loss) << "\n"
            << "accuracy " << fmt_double(result.accuracy) << "\n";
  result.confusion.write_csv((fs::path(g.out_dir) / "confusion_matrix.csv").string());
  CsvWriter metrics((fs::path(g.out_dir) / "eval_metrics.csv").string());
  metrics.row({"loss", "accuracy"});
  metrics.row({fmt_double(result.loss), fmt_double(result.accuracy)});
  metrics.flush();
  return 0;
}

template <typename T>
int run_predict(const GlobalOptions& g, const PredictOptions& o) {
  prepare_out_dir(g);
  write_run_manifest(g, "predict", predict_to_json(o));

  const PreprocConfig pre = build_preproc(o.pre);
  const ModelSpec spec = build_spec(pre, o.model);
  Model<T> model = checkpoint_load<T>(o.checkpoint, spec);
  model.set_mode(Mode::eval);

  const RawSample raw = load_sample_csv(o.sample);
  const Tensor<T> chans = preprocess_channels<T>(raw, pre);
  Tensor<T> batch({1, chans.dim(0), chans.dim(1)});
  std::copy(chans.values().begin(), chans.values().end(), batch.values().begin());

  Tape<T> tape(false);
  const auto logits = model.forward(tape, batch);
  const std::size_t classes = logits.dim(1);

  std::vector<double> probs(classes);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < classes; ++j)
    mx = std::max(mx, static_cast<double>(logits[j]));
  double denom = 0.0;
  for (std::size_t j = 0; j < classes; ++j) {
    probs[j] = std::exp(static_cast<double>(logits[j]) - mx);
    denom += probs[j];
  }
  for (auto& p : probs) p /= denom;

  std::vector<std::size_t> order(classes);
  for (std::size_t j = 0; j < classes; ++j) order[j] = j;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return probs[a] != probs[b] ? probs[a] > probs[b] : a < b;
  });

  CsvWriter out((fs::path(g.out_dir) / "predictions.csv").string());
  out.row({"rank", "label", "probability"});
  for (std::size_t r = 0; r < 5 && r < classes; ++r) {
    const char label = LabelMap::label_at(static_cast<int>(order[r]));
    char line[48];
    std::snprintf(line, sizeof line, "%c %.6f", label, probs[order[r]]);
    std::cout << line << "\n";
    out.row({std::to_string(r + 1), std::string(1, label), fmt_double(probs[order[r]])});
  }
  out.flush();
  return 0;
}

int run_gradcheck(const GlobalOptions& g, const GradcheckOptions& o) {
  prepare_out_dir(g);
  write_run_manifest(g, "gradcheck", gradcheck_to_json(o));

  const ModelSpec spec = ModelSpec::net12_reduced(o.input_channels, LabelMap::kClassCount,
                                                  parse_exp_kind(o.exp), o.scale);
  ModelGradCheckConfig config;
  config.seed = g.seed;
  config.batch = o.batch;
  config.input_length = o.input_length;
  config.eps = o.eps;
  config.inject_fault = o.inject_fault;

  const auto report = model_gradient_report(spec, config);
  CsvWriter csv((fs::path(g.out_dir) / "gradcheck.csv").string());
  csv.row({"layer", "max_rel_err"});
  constexpr double kThreshold = 1e-3;
  double worst = 0.0;
  std::string worst_layer;
  for (const auto& entry : report) {
    std::cout << "layer " << entry.layer << " max_rel_err " << fmt_double(entry.max_rel_err)
              << "\n";
    csv.row({entry.layer, fmt_double(entry.max_rel_err)});
    if (entry.max_rel_err > worst) {
      worst = entry.max_rel_err;
      worst_layer = entry.layer;
    }
  }
  csv.flush();
  if (worst < kThreshold) {
    std::cout << "gradient check passed: " << report.size() << " layers below "
              << fmt_double(kThreshold) << "\n";
    return 0;
  }
  std::cout << "gradient check FAILED: " << worst_layer << " at " << fmt_double(worst)
            << " (threshold " << fmt_double(kThreshold) << ")\n";
  return 1;
}

int dispatch_train(const GlobalOptions& g, const TrainOptions& o) {
  return g.precision == "f64" ? run_train<double>(g, o) : run_train<float>(g, o);
}
int dispatch_eval(const GlobalOptions& g, const EvalOptions& o) {
  return g.precision == "f64" ? run_eval<double>(g, o) : run_eval<float>(g, o);
}
int dispatch_predict(const GlobalOptions& g, const PredictOptions& o) {
  return g.precision == "f64" ? run_predict<double>(g, o) : run_predict<float>(g, o);
}

int run_replay(const std::string& path, const std::optional<std::string>& out_dir_override) {
  std::ifstream in(path);
  if (!in) throw io_error(path + ": cannot open run manifest");
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw config_error(path + ": invalid run manifest: " + e.what());
  }
  try {
    GlobalOptions g;
    g.seed = m.at("seed").get<unsigned long long>();
    g.out_dir = out_dir_override.value_or(m.at("out_dir").get<std::string>());
    g.precision = m.at("precision").get<std::string>();
    if (g.precision != "f32" && g.precision != "f64")
      throw config_error(path + ": precision must be f32 or f64");
    const std::string command = m.at("command").get<std::string>();
    const json& flags = m.at("flags");
    if (command == "synth") return run_synth(g, synth_from_json(flags));
    if (command == "train") return dispatch_train(g, train_from_json(flags));
    if (command == "eval") return dispatch_eval(g, eval_from_json(flags));
    if (command == "predict") return dispatch_predict(g, predict_from_json(flags));
    if (command == "gradcheck") return run_gradcheck(g, gradcheck_from_json(flags));
    throw config_error(path + ": unknown command '" + command + "'");
  } catch (const json::exception& e) {
    throw config_error(path + ": invalid run manifest: " + e.what());
  }
}

void add_preproc_flags(CLI::App* cmd, PreprocFlags& f) {
  cmd->add_option("--target-length", f.target_length, "resampled sequence length")
      ->capture_default_str();
  cmd->add_option("--apply-log", f.apply_log, "apply the signed log squash (true/false)")
      ->capture_default_str();
  cmd->add_option("--keep-channels", f.keep_channels,
                  "comma list of channels to keep (empty = standard 12)");
  cmd->add_option("--gyro-channels", f.gyro_channels,
                  "comma list of channels converted degree->radian")
      ->capture_default_str();
  cmd->add_option("--calib", f.calib, "calibration CSV (channel,bias,scale)");
}

void add_model_flags(CLI::App* cmd, ModelFlags& f) {
  cmd->add_option("--hidden", f.hidden, "LSTM hidden width")->capture_default_str();
  cmd->add_option("--width-scale", f.width_scale, "multiplier on conv channel counts")
      ->capture_default_str();
  cmd->add_option("--exp", f.exp, "exp layer kind: signed_inverse or plain")
      ->check(CLI::IsMember({"signed_inverse", "plain"}))
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pen-stroke letter classification toolkit"};
  app.fallthrough();
  app.require_subcommand(0, 1);

  GlobalOptions g;
  std::string replay_path;
  app.add_option("--seed", g.seed, "master random seed")->capture_default_str();
  auto* out_dir_opt =
      app.add_option("--out-dir", g.out_dir, "artifact output directory")->capture_default_str();
  app.add_option("--precision", g.precision, "float width for model math")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();
  app.add_option("--replay", replay_path, "re-run a saved run_manifest.json");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  SynthOptions so;
  synth->add_option("--writers", so.writers, "number of synthetic writers")->capture_default_str();
  synth->add_option("--per-class", so.per_class, "samples per class per writer")
      ->capture_default_str();
  synth->add_option("--channels", so.channels, "channels per sample")->capture_default_str();
  synth->add_option("--length", so.length, "nominal ticks per sample (jittered +-25%)")
      ->capture_default_str();
  synth->add_option("--noise", so.noise, "white noise sigma as a fraction of signal RMS")
      ->capture_default_str();

  auto* train = app.add_subcommand("train", "train a model from a manifest");
  TrainOptions to;
  train->add_option("--manifest", to.manifest, "dataset manifest CSV")->required();
  add_preproc_flags(train, to.pre);
  add_model_flags(train, to.model);
  train->add_option("--train-fraction", to.train_fraction,
                    "fraction of writers in the train split (1.0 = no test split)")
      ->capture_default_str();
  train->add_option("--epochs", to.epochs, "training epochs")->capture_default_str();
  train->add_option("--batch-size", to.batch_size, "samples per optimizer step")
      ->capture_default_str();
  train->add_option("--checkpoint-every", to.checkpoint_every, "checkpoint cadence in epochs")
      ->capture_default_str();
  train->add_option("--eval-every", to.eval_every, "test evaluation cadence in epochs")
      ->capture_default_str();
  train->add_option("--lr", to.lr, "Adam learning rate")->capture_default_str();
  train->add_option("--beta1", to.beta1, "Adam first-moment decay")->capture_default_str();
  train->add_option("--beta2", to.beta2, "Adam second-moment decay")->capture_default_str();
  train->add_option("--eps", to.eps, "Adam denominator epsilon")->capture_default_str();
  train->add_option("--weight-decay", to.weight_decay, "coupled L2 decay")->capture_default_str();
  train->add_option("--final-epoch", to.final_epoch,
                    "promote this epoch's checkpoint to model_final.ckpt (0 = last)")
      ->capture_default_str();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  EvalOptions eo;
  eval->add_option("--checkpoint", eo.checkpoint, "checkpoint file")->required();
  eval->add_option("--manifest", eo.manifest, "dataset manifest CSV")->required();
  add_preproc_flags(eval, eo.pre);
  add_model_flags(eval, eo.model);
  eval->add_option("--batch-size", eo.batch_size, "evaluation batch size")->capture_default_str();

  auto* predict = app.add_subcommand("predict", "classify one sample CSV");
  PredictOptions po;
  predict->add_option("--checkpoint", po.checkpoint, "checkpoint file")->required();
  predict->add_option("--sample", po.sample, "sample CSV to classify")->required();
  add_preproc_flags(predict, po.pre);
  add_model_flags(predict, po.model);

  auto* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference verification of the end-to-end gradients (double)");
  GradcheckOptions go;
  gradcheck->add_option("--scale", go.scale, "width multiplier for the reduced model")
      ->capture_default_str();
  gradcheck->add_option("--input-channels", go.input_channels, "input channels of the probe model")
      ->capture_default_str();
  gradcheck->add_option("--input-length", go.input_length, "probe input length")
      ->capture_default_str();
  gradcheck->add_option("--batch", go.batch, "probe batch size")->capture_default_str();
  gradcheck->add_option("--eps", go.eps,
                        "central-difference step; absurd values are expected to fail the check")
      ->capture_default_str();
  gradcheck->add_option("--exp", go.exp, "exp layer kind: signed_inverse or plain")
      ->check(CLI::IsMember({"signed_inverse", "plain"}))
      ->capture_default_str();
  gradcheck->add_flag("--inject-fault", go.inject_fault,
                      "corrupt one analytic gradient (negative-control hook)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage problems are configuration errors
  }

  try {
    if (!replay_path.empty()) {
      if (app.get_subcommands().size() > 0)
        throw config_error("--replay cannot be combined with a subcommand");
      const std::optional<std::string> override =
          out_dir_opt->count() > 0 ? std::optional<std::string>(g.out_dir) : std::nullopt;
      return run_replay(replay_path, override);
    }
    if (synth->parsed()) return run_synth(g, so);
    if (train->parsed()) return dispatch_train(g, to);
    if (eval->parsed()) return dispatch_eval(g, eo);
    if (predict->parsed()) return dispatch_predict(g, po);
    if (gradcheck->parsed()) return run_gradcheck(g, go);
    std::cout << app.help();
    return 2;
  } catch (const config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const io_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const numeric_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const spec_mismatch_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
