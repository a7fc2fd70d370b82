#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "scrawl/layers.hpp"
#include "scrawl/tensor.hpp"

namespace scrawl {

// Central-difference comparison of analytic input gradients.
//
// f must map (tape, x) to a scalar tensor and be deterministic in x. The
// analytic gradient comes from one recorded forward + backward; the numeric
// one perturbs each element by +-eps with recording off. Returns the max over
// elements of |analytic - numeric| / max(1, |analytic|).
//
// Run this in double; float forwards lose too many bits for a 1e-3 gate.
template <typename T, typename F>
double finite_diff_check(F&& f, const Tensor<T>& x, double eps = 1e-5) {
  Tensor<T> xg = x.clone();
  xg.enable_grad();
  Tape<T> tape;
  Tensor<T> y = f(tape, xg);
  if (y.numel() != 1)
    throw std::invalid_argument("finite_diff_check: f must return a scalar, got " +
                                shape_str(y.shape()));
  tape.backward(y);
  const std::vector<T> analytic = xg.grad_values();

  Tensor<T> xp = x.clone();
  double worst = 0.0;
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const T saved = xp[i];
    xp[i] = saved + static_cast<T>(eps);
    Tape<T> t_plus(false);
    const double up = static_cast<double>(f(t_plus, xp).item());
    xp[i] = saved - static_cast<T>(eps);
    Tape<T> t_minus(false);
    const double dn = static_cast<double>(f(t_minus, xp).item());
    xp[i] = saved;
    const double numeric = (up - dn) / (2.0 * eps);
    const double a = static_cast<double>(analytic[i]);
    const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
    worst = std::max(worst, err);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// End-to-end parameter gradient check: random input and targets through a
// (usually reduced) model in train mode, cross-entropy loss, every parameter
// element perturbed centrally. Reports the worst relative error per layer.

struct LayerGradReport {
  std::string layer;
  double max_rel_err = 0.0;
};

struct ModelGradCheckConfig {
  std::uint64_t seed = 0;
  std::size_t batch = 2;
  std::size_t input_length = 32;
  double eps = 1e-5;
  // Negative-control hook: corrupts one analytic gradient entry so the
  // check must report a breach. Exists to prove the comparison has teeth.
  bool inject_fault = false;
};

inline std::vector<LayerGradReport> model_gradient_report(const ModelSpec& spec,
                                                          const ModelGradCheckConfig& cfg) {
  Model<double> model(spec, mix_seed(cfg.seed, 101));
  model.set_mode(Mode::train);
  Rng rng(mix_seed(cfg.seed, 202));
  Tensor<double> x =
      Tensor<double>::uniform({cfg.batch, spec.input_channels, cfg.input_length}, rng, -1.0, 1.0);
  std::vector<int> targets(cfg.batch);
  for (auto& t : targets) t = static_cast<int>(rng.below(spec.class_count));

  auto params = model.parameters();

  Tape<double> tape;
  auto loss = cross_entropy(tape, model.forward(tape, x), targets);
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, p] : params) analytic.push_back(p.grad_values());
  if (cfg.inject_fault && !analytic.empty() && !analytic[0].empty()) analytic[0][0] += 1.0;

  auto loss_value = [&]() {
    Tape<double> quiet(false);
    return cross_entropy(quiet, model.forward(quiet, x), targets).item();
  };

  std::vector<LayerGradReport> report;
  auto slot = [&report](const std::string& param_name) -> LayerGradReport& {
    const std::string layer = param_name.substr(0, param_name.find('.'));
    for (auto& r : report)
      if (r.layer == layer) return r;
    report.push_back(LayerGradReport{layer, 0.0});
    return report.back();
  };

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& [name, p] = params[pi];
    LayerGradReport& entry = slot(name);
    const std::size_t n = p.numel();
    for (std::size_t i = 0; i < n; ++i) {
      const double saved = p[i];
      p[i] = saved + cfg.eps;
      const double up = loss_value();
      p[i] = saved - cfg.eps;
      const double dn = loss_value();
      p[i] = saved;
      const double numeric = (up - dn) / (2.0 * cfg.eps);
      const double a = analytic[pi][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      entry.max_rel_err = std::max(entry.max_rel_err, err);
    }
  }
  return report;
}

}  // namespace scrawl
