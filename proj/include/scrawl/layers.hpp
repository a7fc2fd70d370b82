#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "scrawl/tensor.hpp"

namespace scrawl {

enum class Mode { train, eval };
enum class ExpKind { signed_inverse, plain };

inline const char* exp_kind_name(ExpKind k) {
  return k == ExpKind::signed_inverse ? "signed_inverse" : "plain";
}

// ---------------------------------------------------------------------------
// Model descriptors. A ModelSpec is a plain list of layer descriptors plus
// the input/output widths; Model materializes it into parameter tensors.

struct ConvSpec {
  std::string name;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool relu = true;
  bool batch_norm = true;
};

struct PoolSpec {
  std::string name;
  std::size_t kernel = 0;
  std::size_t stride = 1;
};

struct ExpSpec {
  std::string name;
  ExpKind kind = ExpKind::signed_inverse;
};

struct LstmSpec {
  std::string name;
  std::size_t hidden = 0;
};

struct DenseSpec {
  std::string name;
};

using LayerSpec = std::variant<ConvSpec, PoolSpec, ExpSpec, LstmSpec, DenseSpec>;

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

struct ModelSpec {
  std::size_t input_channels = 12;
  std::size_t class_count = LabelMap::kClassCount;
  std::vector<LayerSpec> layers;

  // The default classifier: eight strided/padded conv blocks (ReLU + batch
  // norm except the third, which feeds the exp stage), two 7/3 max pools, a
  // 256-unit LSTM read out at the last step, and a dense layer per class.
  // width_scale multiplies the conv channel counts; hidden is the LSTM width.
  static ModelSpec net12(std::size_t input_channels = 12,
                         std::size_t classes = LabelMap::kClassCount, std::size_t hidden = 256,
                         double width_scale = 1.0, ExpKind exp_kind = ExpKind::signed_inverse) {
    auto ch = [width_scale](std::size_t c) {
      const auto scaled = static_cast<std::size_t>(c * width_scale + 0.5);
      return scaled < 1 ? std::size_t{1} : scaled;
    };
    ModelSpec spec;
    spec.input_channels = input_channels;
    spec.class_count = classes;
    spec.layers = {
        ConvSpec{"conv1", ch(32), 11, 2, 5, true, true},
        ConvSpec{"conv2", ch(32), 11, 1, 5, true, true},
        ConvSpec{"conv3", ch(32), 11, 1, 5, false, false},
        ExpSpec{"exp", exp_kind},
        ConvSpec{"conv4", ch(64), 5, 1, 2, true, true},
        PoolSpec{"maxpool1", 7, 3},
        ConvSpec{"conv5", ch(64), 5, 1, 2, true, true},
        PoolSpec{"maxpool2", 7, 3},
        ConvSpec{"conv6", ch(128), 3, 1, 1, true, true},
        ConvSpec{"conv8", ch(128), 3, 1, 1, true, true},
        ConvSpec{"conv9", ch(128), 3, 1, 1, true, true},
        LstmSpec{"lstm1", hidden},
        DenseSpec{"fc"},
    };
    return spec;
  }

  // Same topology shrunk to gradient-check scale: a few channels per conv,
  // 3/2 pools, a 4-unit LSTM. Viable from input length 11 up at scale 1.
  static ModelSpec net12_reduced(std::size_t input_channels = 2,
                                 std::size_t classes = LabelMap::kClassCount,
                                 ExpKind exp_kind = ExpKind::signed_inverse,
                                 double width_scale = 1.0) {
    if (!(width_scale > 0)) throw config_error("model spec: width_scale must be positive");
    auto scaled = [&](std::size_t base) {
      return std::max<std::size_t>(
          1, static_cast<std::size_t>(std::llround(static_cast<double>(base) * width_scale)));
    };
    ModelSpec spec;
    spec.input_channels = input_channels;
    spec.class_count = classes;
    spec.layers = {
        ConvSpec{"conv1", scaled(2), 11, 2, 5, true, true},
        ConvSpec{"conv2", scaled(2), 11, 1, 5, true, true},
        ConvSpec{"conv3", scaled(2), 11, 1, 5, false, false},
        ExpSpec{"exp", exp_kind},
        ConvSpec{"conv4", scaled(3), 5, 1, 2, true, true},
        PoolSpec{"maxpool1", 3, 2},
        ConvSpec{"conv5", scaled(3), 5, 1, 2, true, true},
        PoolSpec{"maxpool2", 3, 2},
        ConvSpec{"conv6", scaled(4), 3, 1, 1, true, true},
        ConvSpec{"conv8", scaled(4), 3, 1, 1, true, true},
        ConvSpec{"conv9", scaled(4), 3, 1, 1, true, true},
        LstmSpec{"lstm1", scaled(4)},
        DenseSpec{"fc"},
    };
    return spec;
  }

  void validate() const {
    if (input_channels == 0) throw config_error("model spec: input_channels must be positive");
    if (class_count == 0) throw config_error("model spec: class_count must be positive");
    if (layers.empty()) throw config_error("model spec: no layers");
    std::vector<std::string> names;
    std::size_t lstm_count = 0, dense_count = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string& name = layer_name(layers[i]);
      if (name.empty()) throw config_error("model spec: layer " + std::to_string(i) + " has no name");
      if (name.find(',') != std::string::npos || name.find(' ') != std::string::npos)
        throw config_error("model spec: layer name '" + name + "' contains a delimiter");
      for (const auto& seen : names)
        if (seen == name) throw config_error("model spec: duplicate layer name '" + name + "'");
      names.push_back(name);
      if (const auto* c = std::get_if<ConvSpec>(&layers[i])) {
        if (c->out_channels == 0 || c->kernel == 0 || c->stride == 0)
          throw config_error("model spec: conv '" + name + "' has a zero dimension");
        if (c->padding >= c->kernel)
          throw config_error("model spec: conv '" + name + "' padding must be below kernel size");
      } else if (const auto* p = std::get_if<PoolSpec>(&layers[i])) {
        if (p->kernel == 0 || p->stride == 0)
          throw config_error("model spec: pool '" + name + "' has a zero dimension");
      } else if (const auto* l = std::get_if<LstmSpec>(&layers[i])) {
        if (l->hidden == 0) throw config_error("model spec: lstm '" + name + "' has no hidden units");
        ++lstm_count;
        if (i + 2 != layers.size() || !std::holds_alternative<DenseSpec>(layers[i + 1]))
          throw config_error("model spec: the lstm must be followed by the final dense layer");
      } else if (std::holds_alternative<DenseSpec>(layers[i])) {
        ++dense_count;
        if (i + 1 != layers.size())
          throw config_error("model spec: the dense layer must come last");
      }
    }
    if (lstm_count != 1 || dense_count != 1)
      throw config_error("model spec: expected exactly one lstm and one dense layer, got " +
                         std::to_string(lstm_count) + " and " + std::to_string(dense_count));
  }

  static const std::string& layer_name(const LayerSpec& layer) {
    return std::visit([](const auto& l) -> const std::string& { return l.name; }, layer);
  }

  // Stable text form; its hash ties checkpoints to the spec they were
  // trained for.
  std::string canonical() const {
    std::string out = "spec v1\n";
    out += "input_channels " + std::to_string(input_channels) + "\n";
    out += "classes " + std::to_string(class_count) + "\n";
    for (const auto& layer : layers) {
      std::visit(
          [&out](const auto& l) {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, ConvSpec>) {
              out += "conv " + l.name + " out " + std::to_string(l.out_channels) + " k " +
                     std::to_string(l.kernel) + " s " + std::to_string(l.stride) + " p " +
                     std::to_string(l.padding) + " relu " + (l.relu ? "1" : "0") + " bn " +
                     (l.batch_norm ? "1" : "0") + "\n";
            } else if constexpr (std::is_same_v<L, PoolSpec>) {
              out += "pool " + l.name + " k " + std::to_string(l.kernel) + " s " +
                     std::to_string(l.stride) + "\n";
            } else if constexpr (std::is_same_v<L, ExpSpec>) {
              out += "exp " + l.name + " kind " + exp_kind_name(l.kind) + "\n";
            } else if constexpr (std::is_same_v<L, LstmSpec>) {
              out += "lstm " + l.name + " hidden " + std::to_string(l.hidden) + "\n";
            } else {
              out += "dense " + l.name + "\n";
            }
          },
          layer);
    }
    return out;
  }

  std::uint64_t digest() const { return fnv1a64(canonical()); }

  // Sequence lengths after each conv/pool stage for a given input length.
  // Throws (via the op preconditions it mirrors) when a window cannot fit.
  std::vector<std::pair<std::string, std::size_t>> length_chain(std::size_t input_length) const {
    std::vector<std::pair<std::string, std::size_t>> chain;
    std::size_t len = input_length;
    for (const auto& layer : layers) {
      if (const auto* c = std::get_if<ConvSpec>(&layer)) {
        const std::size_t padded = len + 2 * c->padding;
        if (padded < c->kernel)
          throw std::invalid_argument("conv '" + c->name + "': window larger than padded input (" +
                                      std::to_string(c->kernel) + " > " + std::to_string(padded) + ")");
        len = (padded - c->kernel) / c->stride + 1;
        chain.emplace_back(c->name, len);
      } else if (const auto* p = std::get_if<PoolSpec>(&layer)) {
        if (len < p->kernel)
          throw std::invalid_argument("pool '" + p->name + "': sequence shorter than pooling window (" +
                                      std::to_string(len) + " < " + std::to_string(p->kernel) + ")");
        len = (len - p->kernel) / p->stride + 1;
        chain.emplace_back(p->name, len);
      }
    }
    return chain;
  }

  // Shortest input length every window of the stack can digest.
  std::size_t min_input_length() const {
    for (std::size_t len = 1; len < 100000; ++len) {
      try {
        (void)length_chain(len);
        return len;
      } catch (const std::invalid_argument&) {
      }
    }
    throw config_error("model spec: no viable input length below 100000");
  }
};

// ---------------------------------------------------------------------------
// Layer parameter bundles.

template <typename T>
struct Conv1dLayer {
  Tensor<T> weights;  // [out, in, kernel]
  Tensor<T> bias;     // [out]
  std::size_t stride = 1;
  std::size_t padding = 0;
};

template <typename T>
struct BatchNorm1dLayer {
  Tensor<T> gamma, beta;               // trained scale/shift, [C]
  Tensor<T> running_mean, running_var; // eval-mode statistics, [C]
  T eps = static_cast<T>(1e-5);
  T momentum = static_cast<T>(0.1);
  Mode mode = Mode::train;
};

template <typename T>
struct LstmLayer {
  // Gate blocks stacked in i, f, g, o order along the first axis.
  Tensor<T> w_ih;  // [4H, F]
  Tensor<T> w_hh;  // [4H, H]
  Tensor<T> b_ih, b_hh;  // [4H]
  std::size_t hidden = 0;
};

template <typename T>
struct LinearLayer {
  Tensor<T> weights;  // [out, in]
  Tensor<T> bias;     // [out]
};

// ---------------------------------------------------------------------------
// batchnorm1d over [B,C,L]: per-channel statistics across batch and time.
//
// Train mode normalizes with the biased (1/N) batch variance and folds the
// same batch statistics into the running estimates:
//   running = (1 - momentum) * running + momentum * batch_stat
// Eval mode normalizes with the running statistics and never touches them.

template <typename T>
Tensor<T> batchnorm1d(Tape<T>& tape, const Tensor<T>& x, BatchNorm1dLayer<T>& layer) {
  const Mode mode = layer.mode;
  if (x.rank() != 3)
    throw std::invalid_argument("batchnorm1d: expects rank 3, got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  if (layer.gamma.numel() != C)
    throw std::invalid_argument("batchnorm1d: channel mismatch: input has " + std::to_string(C) +
                                ", layer expects " + std::to_string(layer.gamma.numel()));
  const Tensor<T> gamma = layer.gamma, beta = layer.beta;
  const bool track = detail::track(
      tape, x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
  Tensor<T> out({B, C, L}, track);
  const T* px = x.data();
  T* po = out.data();

  if (mode == Mode::train) {
    const std::size_t N = B * L;
    if (N < 2)
      throw std::invalid_argument("batchnorm1d: train mode needs at least 2 values per channel");
    auto xhat = std::make_shared<std::vector<T>>(B * C * L);
    auto inv_std = std::make_shared<std::vector<T>>(C);
    const T inv_n = T{1} / static_cast<T>(N);
    for (std::size_t c = 0; c < C; ++c) {
      T sum{};
      for (std::size_t b = 0; b < B; ++b) {
        const T* row = px + (b * C + c) * L;
        for (std::size_t l = 0; l < L; ++l) sum += row[l];
      }
      const T mean = sum * inv_n;
      T sq{};
      for (std::size_t b = 0; b < B; ++b) {
        const T* row = px + (b * C + c) * L;
        for (std::size_t l = 0; l < L; ++l) {
          const T d = row[l] - mean;
          sq += d * d;
        }
      }
      const T var = sq * inv_n;
      const T istd = T{1} / std::sqrt(var + layer.eps);
      (*inv_std)[c] = istd;
      const T g = gamma[c], bshift = beta[c];
      for (std::size_t b = 0; b < B; ++b) {
        const T* row = px + (b * C + c) * L;
        T* hrow = xhat->data() + (b * C + c) * L;
        T* orow = po + (b * C + c) * L;
        for (std::size_t l = 0; l < L; ++l) {
          const T h = (row[l] - mean) * istd;
          hrow[l] = h;
          orow[l] = g * h + bshift;
        }
      }
      layer.running_mean[c] =
          (T{1} - layer.momentum) * layer.running_mean[c] + layer.momentum * mean;
      layer.running_var[c] =
          (T{1} - layer.momentum) * layer.running_var[c] + layer.momentum * var;
    }
    if (track) {
      tape.record(out, [x, gamma, beta, out, xhat, inv_std, B, C, L]() {
        const T* g = out.grad();
        const std::size_t N = B * L;
        const T inv_n = T{1} / static_cast<T>(N);
        for (std::size_t c = 0; c < C; ++c) {
          T s1{}, s2{};
          for (std::size_t b = 0; b < B; ++b) {
            const T* grow = g + (b * C + c) * L;
            const T* hrow = xhat->data() + (b * C + c) * L;
            for (std::size_t l = 0; l < L; ++l) {
              s1 += grow[l];
              s2 += grow[l] * hrow[l];
            }
          }
          if (gamma.requires_grad()) gamma.grad()[c] += s2;
          if (beta.requires_grad()) beta.grad()[c] += s1;
          if (x.requires_grad()) {
            const T scale = gamma[c] * (*inv_std)[c] * inv_n;
            T* gx = x.grad();
            for (std::size_t b = 0; b < B; ++b) {
              const T* grow = g + (b * C + c) * L;
              const T* hrow = xhat->data() + (b * C + c) * L;
              T* xrow = gx + (b * C + c) * L;
              for (std::size_t l = 0; l < L; ++l)
                xrow[l] += scale * (static_cast<T>(N) * grow[l] - s1 - hrow[l] * s2);
            }
          }
        }
      });
    }
    return out;
  }

  // eval
  auto inv_std = std::make_shared<std::vector<T>>(C);
  auto mean = std::make_shared<std::vector<T>>(C);
  for (std::size_t c = 0; c < C; ++c) {
    (*mean)[c] = layer.running_mean[c];
    (*inv_std)[c] = T{1} / std::sqrt(layer.running_var[c] + layer.eps);
    const T scale = gamma[c] * (*inv_std)[c];
    const T shift = beta[c] - (*mean)[c] * scale;
    for (std::size_t b = 0; b < B; ++b) {
      const T* row = px + (b * C + c) * L;
      T* orow = po + (b * C + c) * L;
      for (std::size_t l = 0; l < L; ++l) orow[l] = row[l] * scale + shift;
    }
  }
  if (track) {
    tape.record(out, [x, gamma, beta, out, mean, inv_std, B, C, L]() {
      const T* g = out.grad();
      const T* px = x.data();
      for (std::size_t c = 0; c < C; ++c) {
        const T istd = (*inv_std)[c];
        const T m = (*mean)[c];
        T s1{}, s2{};
        for (std::size_t b = 0; b < B; ++b) {
          const T* grow = g + (b * C + c) * L;
          const T* row = px + (b * C + c) * L;
          for (std::size_t l = 0; l < L; ++l) {
            s1 += grow[l];
            s2 += grow[l] * (row[l] - m) * istd;
          }
        }
        if (gamma.requires_grad()) gamma.grad()[c] += s2;
        if (beta.requires_grad()) beta.grad()[c] += s1;
        if (x.requires_grad()) {
          const T scale = gamma[c] * istd;
          T* gx = x.grad();
          for (std::size_t b = 0; b < B; ++b) {
            const T* grow = g + (b * C + c) * L;
            T* xrow = gx + (b * C + c) * L;
            for (std::size_t l = 0; l < L; ++l) xrow[l] += scale * grow[l];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// The exp stage: by default the exact inverse of the signed log scaling the
// preprocessing applies, optionally a plain exponential.

template <typename T>
Tensor<T> exp_layer(Tape<T>& tape, const Tensor<T>& x, ExpKind kind) {
  return kind == ExpKind::signed_inverse ? exp1m_signed(tape, x) : scrawl::exp(tape, x);
}

// ---------------------------------------------------------------------------
// LSTM over [B,T,F], zero initial state, returns the final hidden state
// [B,H]. Composed from primitive ops, so the backward pass comes from the
// tape. Gate order along the stacked weight rows: input, forget, cell, output.

template <typename T>
Tensor<T> lstm_forward(Tape<T>& tape, const Tensor<T>& x, const LstmLayer<T>& layer) {
  if (x.rank() != 3)
    throw std::invalid_argument("lstm: expects rank 3 input, got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), steps = x.dim(1), F = x.dim(2);
  const std::size_t H = layer.hidden;
  if (layer.w_ih.shape() != Shape{4 * H, F})
    throw std::invalid_argument("lstm: w_ih shape " + shape_str(layer.w_ih.shape()) +
                                " does not match input features " + std::to_string(F));
  if (layer.w_hh.shape() != Shape{4 * H, H})
    throw std::invalid_argument("lstm: w_hh shape " + shape_str(layer.w_hh.shape()) +
                                " does not match hidden size " + std::to_string(H));
  auto wi_t = transpose_last2(tape, layer.w_ih);            // [F,4H]
  auto wh_t = transpose_last2(tape, layer.w_hh);            // [H,4H]
  auto bias = add(tape, layer.b_ih, layer.b_hh);            // [4H]
  Tensor<T> h({B, H});
  Tensor<T> c({B, H});
  for (std::size_t t = 0; t < steps; ++t) {
    auto xt = select_step(tape, x, t);
    auto gates = add_rowwise(tape, add(tape, matmul(tape, xt, wi_t), matmul(tape, h, wh_t)), bias);
    auto gi = sigmoid(tape, slice_cols(tape, gates, 0, H));
    auto gf = sigmoid(tape, slice_cols(tape, gates, H, H));
    auto gg = scrawl::tanh(tape, slice_cols(tape, gates, 2 * H, H));
    auto go = sigmoid(tape, slice_cols(tape, gates, 3 * H, H));
    c = add(tape, mul(tape, gf, c), mul(tape, gi, gg));
    h = mul(tape, go, scrawl::tanh(tape, c));
  }
  return h;
}

// ---------------------------------------------------------------------------
// Dense head: x[B,in] * W^T + bias.

template <typename T>
Tensor<T> linear_forward(Tape<T>& tape, const Tensor<T>& x, const LinearLayer<T>& layer) {
  if (x.rank() != 2)
    throw std::invalid_argument("linear: expects rank 2 input, got " + shape_str(x.shape()));
  return add_rowwise(tape, matmul(tape, x, transpose_last2(tape, layer.weights)), layer.bias);
}

// ---------------------------------------------------------------------------
// Mean cross entropy from raw logits [B,K], stabilized by the rowwise max.

template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, const std::vector<int>& targets) {
  if (logits.rank() != 2)
    throw std::invalid_argument("cross_entropy: expects rank 2 logits, got " +
                                shape_str(logits.shape()));
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  if (targets.size() != B)
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for batch of " + std::to_string(B));
  for (int t : targets)
    if (t < 0 || t >= static_cast<int>(K))
      throw std::invalid_argument("cross_entropy: target out of range: " + std::to_string(t));

  auto softmax = std::make_shared<std::vector<T>>(B * K);
  const T* pz = logits.data();
  T loss{};
  for (std::size_t b = 0; b < B; ++b) {
    const T* row = pz + b * K;
    T m = row[0];
    for (std::size_t j = 1; j < K; ++j) m = std::max(m, row[j]);
    T denom{};
    T* srow = softmax->data() + b * K;
    for (std::size_t j = 0; j < K; ++j) {
      srow[j] = std::exp(row[j] - m);
      denom += srow[j];
    }
    const T inv = T{1} / denom;
    for (std::size_t j = 0; j < K; ++j) srow[j] *= inv;
    loss += std::log(denom) - (row[targets[b]] - m);
  }
  loss /= static_cast<T>(B);

  Tensor<T> out = Tensor<T>::from_data({1}, {loss}, detail::track(tape, logits.requires_grad()));
  if (out.requires_grad()) {
    auto targets_copy = std::make_shared<std::vector<int>>(targets);
    tape.record(out, [logits, out, softmax, targets_copy, B, K]() {
      const T g = out.grad()[0] / static_cast<T>(B);
      T* gz = logits.grad();
      for (std::size_t b = 0; b < B; ++b) {
        const T* srow = softmax->data() + b * K;
        T* grow = gz + b * K;
        for (std::size_t j = 0; j < K; ++j) grow[j] += g * srow[j];
        grow[(*targets_copy)[b]] -= g;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model: materialized ModelSpec. Parameter initialization draws uniformly
// from +-1/sqrt(fan_in) in a fixed traversal order; biases start at zero
// except the LSTM forget-gate block, which starts at one. Only weight
// tensors consume the rng stream, so toggling batch norm or bias choices
// does not shift later layers' draws.

template <typename T>
class Model {
 public:
  Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    Rng rng(seed);
    std::size_t ch = spec_.input_channels;
    for (const auto& layer : spec_.layers) {
      if (const auto* cs = std::get_if<ConvSpec>(&layer)) {
        ConvStage stage;
        stage.cfg = *cs;
        const T bound = T{1} / std::sqrt(static_cast<T>(ch * cs->kernel));
        stage.layer.weights =
            Tensor<T>::uniform({cs->out_channels, ch, cs->kernel}, rng, -bound, bound, true);
        stage.layer.bias = Tensor<T>({cs->out_channels}, true);
        stage.layer.stride = cs->stride;
        stage.layer.padding = cs->padding;
        if (cs->batch_norm) {
          BatchNorm1dLayer<T> bn;
          bn.gamma = Tensor<T>::full({cs->out_channels}, T{1}, true);
          bn.beta = Tensor<T>({cs->out_channels}, true);
          bn.running_mean = Tensor<T>({cs->out_channels});
          bn.running_var = Tensor<T>::full({cs->out_channels}, T{1});
          stage.bn = std::move(bn);
        }
        ch = cs->out_channels;
        stages_.emplace_back(std::move(stage));
      } else if (const auto* ps = std::get_if<PoolSpec>(&layer)) {
        stages_.emplace_back(PoolStage{*ps});
      } else if (const auto* es = std::get_if<ExpSpec>(&layer)) {
        stages_.emplace_back(ExpStage{*es});
      } else if (const auto* ls = std::get_if<LstmSpec>(&layer)) {
        LstmStage stage;
        stage.cfg = *ls;
        const std::size_t H = ls->hidden;
        const T bi = T{1} / std::sqrt(static_cast<T>(ch));
        const T bh = T{1} / std::sqrt(static_cast<T>(H));
        stage.layer.w_ih = Tensor<T>::uniform({4 * H, ch}, rng, -bi, bi, true);
        stage.layer.w_hh = Tensor<T>::uniform({4 * H, H}, rng, -bh, bh, true);
        stage.layer.b_ih = Tensor<T>({4 * H}, true);
        for (std::size_t i = H; i < 2 * H; ++i) stage.layer.b_ih[i] = T{1};  // forget gate open
        stage.layer.b_hh = Tensor<T>({4 * H}, true);
        stage.layer.hidden = H;
        ch = H;
        stages_.emplace_back(std::move(stage));
      } else if (const auto* ds = std::get_if<DenseSpec>(&layer)) {
        DenseStage stage;
        stage.cfg = *ds;
        const T bound = T{1} / std::sqrt(static_cast<T>(ch));
        stage.layer.weights = Tensor<T>::uniform({spec_.class_count, ch}, rng, -bound, bound, true);
        stage.layer.bias = Tensor<T>({spec_.class_count}, true);
        ch = spec_.class_count;
        stages_.emplace_back(std::move(stage));
      }
    }
  }

  // [B, input_channels, L] -> [B, class_count] logits.
  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) {
    if (x.rank() != 3)
      throw std::invalid_argument("model: expects [B,C,L] input, got " + shape_str(x.shape()));
    if (x.dim(1) != spec_.input_channels)
      throw std::invalid_argument("model: input has " + std::to_string(x.dim(1)) +
                                  " channels, spec expects " + std::to_string(spec_.input_channels));
    Tensor<T> cur = x;
    for (auto& stage : stages_) {
      if (auto* conv = std::get_if<ConvStage>(&stage)) {
        cur = conv1d(tape, cur, conv->layer.weights, conv->layer.bias, conv->layer.stride,
                     conv->layer.padding);
        if (conv->cfg.relu) cur = relu(tape, cur);
        if (conv->bn) cur = batchnorm1d(tape, cur, *conv->bn);
      } else if (auto* pool = std::get_if<PoolStage>(&stage)) {
        cur = maxpool1d(tape, cur, pool->cfg.kernel, pool->cfg.stride);
      } else if (auto* ex = std::get_if<ExpStage>(&stage)) {
        cur = exp_layer(tape, cur, ex->cfg.kind);
      } else if (auto* lstm = std::get_if<LstmStage>(&stage)) {
        cur = lstm_forward(tape, transpose_last2(tape, cur), lstm->layer);
      } else if (auto* dense = std::get_if<DenseStage>(&stage)) {
        cur = linear_forward(tape, cur, dense->layer);
      }
    }
    return cur;
  }

  void set_mode(Mode m) {
    mode_ = m;
    for (auto& stage : stages_)
      if (auto* conv = std::get_if<ConvStage>(&stage))
        if (conv->bn) conv->bn->mode = m;
  }
  Mode mode() const { return mode_; }
  const ModelSpec& spec() const { return spec_; }

  // Trainable parameters in fixed traversal order.
  std::vector<std::pair<std::string, Tensor<T>>> parameters() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (auto& stage : stages_) {
      if (auto* conv = std::get_if<ConvStage>(&stage)) {
        out.emplace_back(conv->cfg.name + ".weight", conv->layer.weights);
        out.emplace_back(conv->cfg.name + ".bias", conv->layer.bias);
        if (conv->bn) {
          out.emplace_back(conv->cfg.name + ".bn.gamma", conv->bn->gamma);
          out.emplace_back(conv->cfg.name + ".bn.beta", conv->bn->beta);
        }
      } else if (auto* lstm = std::get_if<LstmStage>(&stage)) {
        out.emplace_back(lstm->cfg.name + ".w_ih", lstm->layer.w_ih);
        out.emplace_back(lstm->cfg.name + ".w_hh", lstm->layer.w_hh);
        out.emplace_back(lstm->cfg.name + ".b_ih", lstm->layer.b_ih);
        out.emplace_back(lstm->cfg.name + ".b_hh", lstm->layer.b_hh);
      } else if (auto* dense = std::get_if<DenseStage>(&stage)) {
        out.emplace_back(dense->cfg.name + ".weight", dense->layer.weights);
        out.emplace_back(dense->cfg.name + ".bias", dense->layer.bias);
      }
    }
    return out;
  }

  // Parameters plus batch norm running statistics: everything a checkpoint
  // needs to restore inference behavior exactly.
  std::vector<std::pair<std::string, Tensor<T>>> state() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (auto& stage : stages_) {
      if (auto* conv = std::get_if<ConvStage>(&stage)) {
        out.emplace_back(conv->cfg.name + ".weight", conv->layer.weights);
        out.emplace_back(conv->cfg.name + ".bias", conv->layer.bias);
        if (conv->bn) {
          out.emplace_back(conv->cfg.name + ".bn.gamma", conv->bn->gamma);
          out.emplace_back(conv->cfg.name + ".bn.beta", conv->bn->beta);
          out.emplace_back(conv->cfg.name + ".bn.running_mean", conv->bn->running_mean);
          out.emplace_back(conv->cfg.name + ".bn.running_var", conv->bn->running_var);
        }
      } else if (auto* lstm = std::get_if<LstmStage>(&stage)) {
        out.emplace_back(lstm->cfg.name + ".w_ih", lstm->layer.w_ih);
        out.emplace_back(lstm->cfg.name + ".w_hh", lstm->layer.w_hh);
        out.emplace_back(lstm->cfg.name + ".b_ih", lstm->layer.b_ih);
        out.emplace_back(lstm->cfg.name + ".b_hh", lstm->layer.b_hh);
      } else if (auto* dense = std::get_if<DenseStage>(&stage)) {
        out.emplace_back(dense->cfg.name + ".weight", dense->layer.weights);
        out.emplace_back(dense->cfg.name + ".bias", dense->layer.bias);
      }
    }
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& [name, t] : parameters()) n += t.numel();
    return n;
  }

 private:
  struct ConvStage {
    ConvSpec cfg;
    Conv1dLayer<T> layer;
    std::optional<BatchNorm1dLayer<T>> bn;
  };
  struct PoolStage {
    PoolSpec cfg;
  };
  struct ExpStage {
    ExpSpec cfg;
  };
  struct LstmStage {
    LstmSpec cfg;
    LstmLayer<T> layer;
  };
  struct DenseStage {
    DenseSpec cfg;
    LinearLayer<T> layer;
  };

  ModelSpec spec_;
  Mode mode_ = Mode::train;
  std::vector<std::variant<ConvStage, PoolStage, ExpStage, LstmStage, DenseStage>> stages_;
};

template <typename T>
Tensor<T> model_forward(Model<T>& model, Tape<T>& tape, const Tensor<T>& x) {
  return model.forward(tape, x);
}

}  // namespace scrawl
