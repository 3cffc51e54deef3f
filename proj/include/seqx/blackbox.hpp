#pragma once

// The black-box classifier: a two-block CNN
//   [conv3x3 -> ReLU -> batch-norm -> maxpool2] x 2 -> linear -> sigmoid
// with its trainer, inference path, activation tracing and the
// TP/TN/FP/FN categorizer.
//
// Everything is templated on the scalar so the same code runs in float for
// training/serving and in double for finite-difference gradient checks.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "seqx/dataset.hpp"
#include "seqx/error.hpp"
#include "seqx/rng.hpp"

namespace seqx {

inline constexpr std::size_t kConv1Filters = 16;
inline constexpr std::size_t kConv2Filters = 32;
inline constexpr std::size_t kKernelSide = 3;
inline constexpr std::size_t kBlock1Side = kImageSide;       // 28
inline constexpr std::size_t kBlock2Side = kImageSide / 2;   // 14
inline constexpr std::size_t kPooledSide = kImageSide / 4;   // 7
inline constexpr std::size_t kHeadInputs = kConv2Filters * kPooledSide * kPooledSide;  // 1568
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <typename T>
struct BatchNormParams {
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;

  bool operator==(const BatchNormParams&) const = default;
};

template <typename T>
struct ConvBlockParams {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<T> weight;  // [out][in][3][3]
  std::vector<T> bias;    // [out]
  BatchNormParams<T> bn;

  bool operator==(const ConvBlockParams&) const = default;
};

template <typename T>
struct BasicNetworkParams {
  ConvBlockParams<T> block1;
  ConvBlockParams<T> block2;
  std::vector<T> head_weight;  // [1568], flattened [channel][y][x]
  std::vector<T> head_bias;    // [1]

  bool operator==(const BasicNetworkParams&) const = default;

  static BasicNetworkParams zeros() {
    BasicNetworkParams p;
    auto block = [](std::size_t in, std::size_t out) {
      ConvBlockParams<T> b;
      b.in_channels = in;
      b.out_channels = out;
      b.weight.assign(out * in * kKernelSide * kKernelSide, T(0));
      b.bias.assign(out, T(0));
      b.bn.gamma.assign(out, T(1));
      b.bn.beta.assign(out, T(0));
      b.bn.running_mean.assign(out, T(0));
      b.bn.running_var.assign(out, T(1));
      return b;
    };
    p.block1 = block(1, kConv1Filters);
    p.block2 = block(kConv1Filters, kConv2Filters);
    p.head_weight.assign(kHeadInputs, T(0));
    p.head_bias.assign(1, T(0));
    return p;
  }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static BasicNetworkParams initialized(std::uint64_t seed) {
    auto p = zeros();
    Rng rng(seed);
    auto fill = [&rng](std::vector<T>& v, std::size_t fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    };
    fill(p.block1.weight, 9);
    fill(p.block1.bias, 9);
    fill(p.block2.weight, kConv1Filters * 9);
    fill(p.block2.bias, kConv1Filters * 9);
    fill(p.head_weight, kHeadInputs);
    fill(p.head_bias, kHeadInputs);
    return p;
  }

  template <typename U>
  BasicNetworkParams<U> cast() const {
    auto conv = [](const std::vector<T>& v) { return std::vector<U>(v.begin(), v.end()); };
    auto block = [&](const ConvBlockParams<T>& b) {
      return ConvBlockParams<U>{b.in_channels, b.out_channels, conv(b.weight), conv(b.bias),
                                {conv(b.bn.gamma), conv(b.bn.beta), conv(b.bn.running_mean),
                                 conv(b.bn.running_var)}};
    };
    return {block(block1), block(block2), conv(head_weight), conv(head_bias)};
  }
};

using NetworkParams = BasicNetworkParams<float>;

// Trainable tensors in checkpoint/documentation order; running stats are
// excluded.
template <typename P>
auto trainable_tensors(P& p) {
  using Vec = std::conditional_t<std::is_const_v<P>,
                                 const std::remove_cvref_t<decltype(p.head_weight)>,
                                 std::remove_cvref_t<decltype(p.head_weight)>>;
  return std::vector<std::pair<std::string_view, Vec*>>{
      {"block1.conv.weight", &p.block1.weight}, {"block1.conv.bias", &p.block1.bias},
      {"block1.bn.gamma", &p.block1.bn.gamma},  {"block1.bn.beta", &p.block1.bn.beta},
      {"block2.conv.weight", &p.block2.weight}, {"block2.conv.bias", &p.block2.bias},
      {"block2.bn.gamma", &p.block2.bn.gamma},  {"block2.bn.beta", &p.block2.bn.beta},
      {"head.weight", &p.head_weight},          {"head.bias", &p.head_bias},
  };
}

// All tensors, running stats included, in checkpoint order.
template <typename P>
auto all_tensors(P& p) {
  auto out = trainable_tensors(p);
  out.insert(out.begin() + 4, {{"block1.bn.running_mean", &p.block1.bn.running_mean},
                               {"block1.bn.running_var", &p.block1.bn.running_var}});
  out.insert(out.begin() + 10, {{"block2.bn.running_mean", &p.block2.bn.running_mean},
                                {"block2.bn.running_var", &p.block2.bn.running_var}});
  return out;
}

template <typename T>
bool params_valid(const BasicNetworkParams<T>& p) {
  for (const auto& [name, tensor] : all_tensors(p)) {
    for (T v : *tensor) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
  }
  for (const auto* bn : {&p.block1.bn, &p.block2.bn}) {
    for (T v : bn->running_var) {
      if (!(v > T(0))) return false;
    }
  }
  return p.block1.weight.size() == kConv1Filters * 9 &&
         p.block2.weight.size() == kConv2Filters * kConv1Filters * 9 &&
         p.head_weight.size() == kHeadInputs && p.head_bias.size() == 1;
}

struct Prediction {
  double probability = 0.5;
  double logit = 0.0;
  int predicted_label = 0;

  bool operator==(const Prediction&) const = default;

  static Prediction from_logit(double logit) {
    return {1.0 / (1.0 + std::exp(-logit)), logit, logit > 0.0 ? 1 : 0};
  }
};

enum class Possibility { TP = 0, TN = 1, FP = 2, FN = 3 };

inline constexpr std::array<Possibility, 4> kPossibilities = {Possibility::TP, Possibility::TN,
                                                              Possibility::FP, Possibility::FN};

constexpr std::string_view to_string(Possibility p) {
  switch (p) {
    case Possibility::TP: return "TP";
    case Possibility::TN: return "TN";
    case Possibility::FP: return "FP";
    case Possibility::FN: return "FN";
  }
  return "?";
}

inline Possibility possibility_from_string(std::string_view s) {
  for (auto p : kPossibilities) {
    if (to_string(p) == s) return p;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown classification possibility '" + std::string(s) + "'");
}

constexpr Possibility classify(int true_label, int predicted_label) {
  if (true_label == 1) return predicted_label == 1 ? Possibility::TP : Possibility::FN;
  return predicted_label == 1 ? Possibility::FP : Possibility::TN;
}

namespace nn {

// 3x3 same-padding convolution over square planes; out = bias + sum w*in.
template <typename T>
void conv3x3_forward(const T* in, std::size_t cin, std::size_t side, const T* w, const T* b,
                     std::size_t cout, T* out) {
  const std::size_t plane = side * side;
  for (std::size_t co = 0; co < cout; ++co) {
    T* o = out + co * plane;
    std::fill(o, o + plane, b[co]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* src = in + ci * plane;
      for (std::size_t k = 0; k < 9; ++k) {
        const T wk = w[(co * cin + ci) * 9 + k];
        const long dy = static_cast<long>(k / 3) - 1;
        const long dx = static_cast<long>(k % 3) - 1;
        const std::size_t y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? side - 1 : side;
        const std::size_t x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? side - 1 : side;
        for (std::size_t y = y0; y < y1; ++y) {
          T* orow = o + y * side;
          const T* irow = src + (y + dy) * side + dx;
          for (std::size_t x = x0; x < x1; ++x) orow[x] += wk * irow[x];
        }
      }
    }
  }
}

// Accumulates dw, db and (if din is non-null) din.
template <typename T>
void conv3x3_backward(const T* in, std::size_t cin, std::size_t side, const T* w, std::size_t cout,
                      const T* dout, T* dw, T* db, T* din) {
  const std::size_t plane = side * side;
  for (std::size_t co = 0; co < cout; ++co) {
    const T* g = dout + co * plane;
    T bias_grad = 0;
    for (std::size_t i = 0; i < plane; ++i) bias_grad += g[i];
    db[co] += bias_grad;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* src = in + ci * plane;
      T* dsrc = din ? din + ci * plane : nullptr;
      for (std::size_t k = 0; k < 9; ++k) {
        const std::size_t widx = (co * cin + ci) * 9 + k;
        const T wk = w[widx];
        const long dy = static_cast<long>(k / 3) - 1;
        const long dx = static_cast<long>(k % 3) - 1;
        const std::size_t y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? side - 1 : side;
        const std::size_t x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? side - 1 : side;
        T acc = 0;
        for (std::size_t y = y0; y < y1; ++y) {
          const T* grow = g + y * side;
          const T* irow = src + (y + dy) * side + dx;
          for (std::size_t x = x0; x < x1; ++x) acc += grow[x] * irow[x];
          if (dsrc) {
            T* drow = dsrc + (y + dy) * side + dx;
            for (std::size_t x = x0; x < x1; ++x) drow[x] += wk * grow[x];
          }
        }
        dw[widx] += acc;
      }
    }
  }
}

// 2x2 stride-2 max pooling; argmax holds flat indices into `in` (first max
// in row-major window order wins).
template <typename T>
void maxpool2_forward(const T* in, std::size_t channels, std::size_t side, T* out,
                      std::uint32_t* argmax, std::size_t in_offset = 0) {
  const std::size_t half = side / 2;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < half; ++y) {
      for (std::size_t x = 0; x < half; ++x) {
        std::size_t best = c * side * side + (2 * y) * side + 2 * x;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = c * side * side + (2 * y + dy) * side + (2 * x + dx);
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = c * half * half + y * half + x;
        out[o] = in[best];
        argmax[o] = static_cast<std::uint32_t>(best + in_offset);
      }
    }
  }
}

template <typename T>
T bce_with_logits(T logit, int label) {
  using std::abs, std::exp, std::log1p, std::max;
  return max(logit, T(0)) - logit * T(label) + log1p(exp(-abs(logit)));
}

template <typename T>
T sigmoid(T z) {
  return T(1) / (T(1) + std::exp(-z));
}

}  // namespace nn

enum class LayerKind { ConvRelu, BatchNorm, MaxPool, Linear };

constexpr std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::ConvRelu: return "conv_relu";
    case LayerKind::BatchNorm: return "batch_norm";
    case LayerKind::MaxPool: return "max_pool";
    case LayerKind::Linear: return "linear";
  }
  return "?";
}

// One inference-mode layer. For ConvRelu, pre_activation is the conv output
// and output its ReLU; for the other kinds pre_activation == output.
template <typename T>
struct LayerRecord {
  LayerKind kind{};
  std::size_t in_channels = 0;
  std::size_t in_side = 0;
  std::size_t out_channels = 0;
  std::size_t out_side = 0;
  std::vector<T> input;
  std::vector<T> pre_activation;
  std::vector<T> output;
  std::vector<std::uint32_t> argmax;  // MaxPool only
};

template <typename T>
struct BasicActivationTrace {
  std::vector<LayerRecord<T>> layers;
  T logit = 0;
};

using ActivationTrace = BasicActivationTrace<float>;

namespace detail {

template <typename T>
void batchnorm_infer(const BatchNormParams<T>& bn, std::size_t channels, std::size_t plane,
                     const T* in, T* out) {
  for (std::size_t c = 0; c < channels; ++c) {
    const T scale = bn.gamma[c] / static_cast<T>(std::sqrt(static_cast<double>(bn.running_var[c]) +
                                                           kBatchNormEps));
    const T shift = bn.beta[c] - bn.running_mean[c] * scale;
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = in[c * plane + i] * scale + shift;
  }
}

// Single-image inference; fills `trace` when given.
template <typename T>
T infer(const BasicNetworkParams<T>& p, const Pixels& pixels, BasicActivationTrace<T>* trace) {
  std::vector<T> x(pixels.begin(), pixels.end());
  auto block = [&](const ConvBlockParams<T>& b, std::size_t side, std::vector<T> in) {
    const std::size_t plane = side * side;
    std::vector<T> z(b.out_channels * plane);
    nn::conv3x3_forward(in.data(), b.in_channels, side, b.weight.data(), b.bias.data(),
                        b.out_channels, z.data());
    std::vector<T> a(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) a[i] = z[i] > T(0) ? z[i] : T(0);
    std::vector<T> y(a.size());
    batchnorm_infer(b.bn, b.out_channels, plane, a.data(), y.data());
    std::vector<T> pooled(b.out_channels * plane / 4);
    std::vector<std::uint32_t> arg(pooled.size());
    nn::maxpool2_forward(y.data(), b.out_channels, side, pooled.data(), arg.data());
    if (trace) {
      trace->layers.push_back({LayerKind::ConvRelu, b.in_channels, side, b.out_channels, side,
                               std::move(in), std::move(z), a, {}});
      trace->layers.push_back(
          {LayerKind::BatchNorm, b.out_channels, side, b.out_channels, side, std::move(a), y, y, {}});
      trace->layers.push_back({LayerKind::MaxPool, b.out_channels, side, b.out_channels, side / 2,
                               std::move(y), pooled, pooled, std::move(arg)});
    }
    return pooled;
  };
  auto h1 = block(p.block1, kBlock1Side, std::move(x));
  auto h2 = block(p.block2, kBlock2Side, std::move(h1));
  T logit = p.head_bias[0];
  for (std::size_t i = 0; i < kHeadInputs; ++i) logit += p.head_weight[i] * h2[i];
  if (!std::isfinite(static_cast<double>(logit))) {
    throw Error(ErrorCode::NonFiniteActivation, "forward pass produced a non-finite logit");
  }
  if (trace) {
    trace->layers.push_back(
        {LayerKind::Linear, kConv2Filters, kPooledSide, 1, 1, std::move(h2), {logit}, {logit}, {}});
    trace->logit = logit;
  }
  return logit;
}

}  // namespace detail

template <typename T>
Prediction predict(const BasicNetworkParams<T>& params, const ImageInstance& image) {
  return Prediction::from_logit(static_cast<double>(detail::infer<T>(params, image.pixels, nullptr)));
}

template <typename T>
BasicActivationTrace<T> forward_trace(const BasicNetworkParams<T>& params, const ImageInstance& image) {
  BasicActivationTrace<T> trace;
  detail::infer(params, image.pixels, &trace);
  return trace;
}

template <typename T>
double accuracy(const BasicNetworkParams<T>& params, const LabeledDataset& data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& inst : data.instances()) {
    correct += predict(params, inst).predicted_label == inst.true_label;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// Training-mode loss (batch statistics in batch-norm) and gradients of the
// mean binary cross-entropy over the batch. When `running_stats` is given,
// its batch-norm running statistics are updated with this batch.
template <typename T>
T loss_and_gradient(const BasicNetworkParams<T>& p, std::span<const ImageInstance* const> batch,
                    BasicNetworkParams<T>& grad, BasicNetworkParams<T>* running_stats = nullptr) {
  const std::size_t n = batch.size();
  grad = BasicNetworkParams<T>::zeros();
  for (auto& [name, tensor] : trainable_tensors(grad)) std::fill(tensor->begin(), tensor->end(), T(0));

  struct BlockCache {
    std::vector<T> input, z, a, xhat, y, pooled;
    std::vector<std::uint32_t> argmax;
    std::vector<T> inv_std;
  };

  auto block_forward = [&](const ConvBlockParams<T>& b, std::size_t side, std::vector<T> input,
                           BatchNormParams<T>* stats_out) {
    BlockCache c;
    const std::size_t plane = side * side;
    const std::size_t in_size = b.in_channels * plane;
    const std::size_t out_size = b.out_channels * plane;
    c.input = std::move(input);
    c.z.resize(n * out_size);
    for (std::size_t i = 0; i < n; ++i) {
      nn::conv3x3_forward(c.input.data() + i * in_size, b.in_channels, side, b.weight.data(),
                          b.bias.data(), b.out_channels, c.z.data() + i * out_size);
    }
    c.a.resize(c.z.size());
    for (std::size_t i = 0; i < c.z.size(); ++i) c.a[i] = c.z[i] > T(0) ? c.z[i] : T(0);
    c.xhat.resize(c.a.size());
    c.y.resize(c.a.size());
    c.inv_std.resize(b.out_channels);
    const double count = static_cast<double>(n * plane);
    for (std::size_t ch = 0; ch < b.out_channels; ++ch) {
      double sum = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* src = c.a.data() + i * out_size + ch * plane;
        for (std::size_t k = 0; k < plane; ++k) sum += src[k];
      }
      const double mean = sum / count;
      double sq = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* src = c.a.data() + i * out_size + ch * plane;
        for (std::size_t k = 0; k < plane; ++k) sq += (src[k] - mean) * (src[k] - mean);
      }
      const double var = sq / count;
      const T inv_std = static_cast<T>(1.0 / std::sqrt(var + kBatchNormEps));
      c.inv_std[ch] = inv_std;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = i * out_size + ch * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          c.xhat[off + k] = (c.a[off + k] - static_cast<T>(mean)) * inv_std;
          c.y[off + k] = b.bn.gamma[ch] * c.xhat[off + k] + b.bn.beta[ch];
        }
      }
      if (stats_out) {
        const double unbiased = count > 1 ? var * count / (count - 1) : var;
        auto& rm = stats_out->running_mean[ch];
        auto& rv = stats_out->running_var[ch];
        rm = static_cast<T>((1 - kBatchNormMomentum) * rm + kBatchNormMomentum * mean);
        rv = static_cast<T>((1 - kBatchNormMomentum) * rv + kBatchNormMomentum * unbiased);
      }
    }
    const std::size_t pooled_size = out_size / 4;
    c.pooled.resize(n * pooled_size);
    c.argmax.resize(n * pooled_size);
    for (std::size_t i = 0; i < n; ++i) {
      nn::maxpool2_forward(c.y.data() + i * out_size, b.out_channels, side,
                           c.pooled.data() + i * pooled_size, c.argmax.data() + i * pooled_size,
                           i * out_size);
    }
    return c;
  };

  // dpooled -> accumulates parameter grads, returns d(input)
  auto block_backward = [&](const ConvBlockParams<T>& b, ConvBlockParams<T>& g, std::size_t side,
                            const BlockCache& c, const std::vector<T>& dpooled, bool need_input) {
    const std::size_t plane = side * side;
    const std::size_t in_size = b.in_channels * plane;
    const std::size_t out_size = b.out_channels * plane;
    std::vector<T> dy(c.y.size(), T(0));
    for (std::size_t i = 0; i < dpooled.size(); ++i) dy[c.argmax[i]] += dpooled[i];
    std::vector<T> dz(c.z.size());
    const T count = static_cast<T>(n * plane);
    for (std::size_t ch = 0; ch < b.out_channels; ++ch) {
      T sum_dy = 0, sum_dy_xhat = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = i * out_size + ch * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          sum_dy += dy[off + k];
          sum_dy_xhat += dy[off + k] * c.xhat[off + k];
        }
      }
      g.bn.gamma[ch] += sum_dy_xhat;
      g.bn.beta[ch] += sum_dy;
      const T gamma = b.bn.gamma[ch];
      const T scale = gamma * c.inv_std[ch] / count;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = i * out_size + ch * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          const T da = scale * (count * dy[off + k] - sum_dy - c.xhat[off + k] * sum_dy_xhat);
          dz[off + k] = c.z[off + k] > T(0) ? da : T(0);
        }
      }
    }
    std::vector<T> din(need_input ? n * in_size : 0, T(0));
    for (std::size_t i = 0; i < n; ++i) {
      nn::conv3x3_backward(c.input.data() + i * in_size, b.in_channels, side, b.weight.data(),
                           b.out_channels, dz.data() + i * out_size, g.weight.data(), g.bias.data(),
                           need_input ? din.data() + i * in_size : nullptr);
    }
    return din;
  };

  std::vector<T> x(n * kImagePixels);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(batch[i]->pixels.begin(), batch[i]->pixels.end(), x.begin() + i * kImagePixels);
  }
  auto c1 = block_forward(p.block1, kBlock1Side, std::move(x),
                          running_stats ? &running_stats->block1.bn : nullptr);
  auto c2 = block_forward(p.block2, kBlock2Side, c1.pooled,
                          running_stats ? &running_stats->block2.bn : nullptr);

  T loss = 0;
  std::vector<T> dpooled2(n * kHeadInputs);
  for (std::size_t i = 0; i < n; ++i) {
    const T* h = c2.pooled.data() + i * kHeadInputs;
    T logit = p.head_bias[0];
    for (std::size_t k = 0; k < kHeadInputs; ++k) logit += p.head_weight[k] * h[k];
    if (!std::isfinite(static_cast<double>(logit))) {
      throw Error(ErrorCode::DivergedLoss, "non-finite logit during training");
    }
    const int label = batch[i]->true_label;
    loss += nn::bce_with_logits(logit, label);
    const T dlogit = (nn::sigmoid(logit) - T(label)) / static_cast<T>(n);
    grad.head_bias[0] += dlogit;
    for (std::size_t k = 0; k < kHeadInputs; ++k) {
      grad.head_weight[k] += dlogit * h[k];
      dpooled2[i * kHeadInputs + k] = dlogit * p.head_weight[k];
    }
  }
  loss /= static_cast<T>(n);

  auto dpooled1 = block_backward(p.block2, grad.block2, kBlock2Side, c2, dpooled2, true);
  block_backward(p.block1, grad.block1, kBlock1Side, c1, dpooled1, false);
  return loss;
}

struct TrainConfig {
  std::size_t epochs = 15;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
};

// Long reference schedule; the desk default above is far shorter.
inline constexpr std::size_t kReferenceEpochs = 300;

template <typename T>
struct BasicTrainResult {
  BasicNetworkParams<T> params;
  std::vector<double> epoch_losses;  // mean batch loss per epoch
};

using TrainResult = BasicTrainResult<float>;

// Adam over mini-batches. Init and shuffle draw from separate streams derived
// from config.seed, so the result is a pure function of (train_set, config).
template <typename T = float>
BasicTrainResult<T> train(const LabeledDataset& train_set, const TrainConfig& config,
                          const std::function<void(std::size_t, double)>& on_epoch = {}) {
  if (train_set.empty()) throw Error(ErrorCode::EmptyTrainSet, "training set is empty");
  if (train_set.count(0) == 0 || train_set.count(1) == 0 || train_set.class_counts().size() != 2) {
    throw Error(ErrorCode::SingleClassTrainSet, "training needs instances of both labels 0 and 1");
  }
  if (config.batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch_size must be positive");

  BasicTrainResult<T> result{BasicNetworkParams<T>::initialized(mix_seed(config.seed, 0)), {}};
  auto& params = result.params;
  Rng shuffle_rng(mix_seed(config.seed, 1));

  auto m = BasicNetworkParams<T>::zeros();
  auto v = BasicNetworkParams<T>::zeros();
  BasicNetworkParams<T> grad;
  std::size_t step = 0;

  std::vector<const ImageInstance*> order;
  for (const auto& inst : train_set.instances()) order.push_back(&inst);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span(order));
    double epoch_loss = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, order.size() - start);
      const T loss = loss_and_gradient<T>(params, std::span(order).subspan(start, len), grad, &params);
      if (!std::isfinite(static_cast<double>(loss))) {
        throw Error(ErrorCode::DivergedLoss, "loss became non-finite in epoch " + std::to_string(epoch));
      }
      epoch_loss += static_cast<double>(loss);
      ++batches;
      ++step;
      const double c1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(step));
      auto ps = trainable_tensors(params);
      auto gs = trainable_tensors(grad);
      auto ms = trainable_tensors(m);
      auto vs = trainable_tensors(v);
      for (std::size_t t = 0; t < ps.size(); ++t) {
        auto& pt = *ps[t].second;
        const auto& gt = *gs[t].second;
        auto& mt = *ms[t].second;
        auto& vt = *vs[t].second;
        for (std::size_t i = 0; i < pt.size(); ++i) {
          const double g = gt[i];
          mt[i] = static_cast<T>(config.adam_beta1 * mt[i] + (1 - config.adam_beta1) * g);
          vt[i] = static_cast<T>(config.adam_beta2 * vt[i] + (1 - config.adam_beta2) * g * g);
          const double mhat = mt[i] / c1;
          const double vhat = vt[i] / c2;
          pt[i] = static_cast<T>(pt[i] - config.learning_rate * mhat / (std::sqrt(vhat) + config.adam_epsilon));
        }
      }
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(batches));
    if (on_epoch) on_epoch(epoch, result.epoch_losses.back());
  }
  return result;
}

struct CategorizedEntry {
  std::uint32_t id = 0;
  Prediction prediction;

  bool operator==(const CategorizedEntry&) const = default;
};

struct CategorizedTestSet {
  std::array<std::vector<CategorizedEntry>, 4> lists;  // indexed by Possibility

  const std::vector<CategorizedEntry>& operator[](Possibility p) const {
    return lists[static_cast<std::size_t>(p)];
  }
  std::vector<CategorizedEntry>& operator[](Possibility p) { return lists[static_cast<std::size_t>(p)]; }

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& l : lists) n += l.size();
    return n;
  }

  bool operator==(const CategorizedTestSet&) const = default;
};

// Partitions (instance, prediction) pairs by classification possibility.
// Correct cells are ranked by confidence |p - 0.5|, incorrect cells by error
// |p - true_label|, both descending with ties by ascending id.
inline CategorizedTestSet categorize_predictions(const LabeledDataset& test_set,
                                                 std::span<const Prediction> predictions) {
  if (predictions.size() != test_set.size()) {
    throw Error(ErrorCode::InvalidArgument, "one prediction per test instance required");
  }
  CategorizedTestSet out;
  std::array<std::vector<std::pair<double, CategorizedEntry>>, 4> ranked;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    const auto& inst = test_set.instances()[i];
    const auto& pred = predictions[i];
    const auto cell = classify(inst.true_label, pred.predicted_label);
    const bool correct = cell == Possibility::TP || cell == Possibility::TN;
    const double score = correct ? std::abs(pred.probability - 0.5)
                                 : std::abs(pred.probability - static_cast<double>(inst.true_label));
    ranked[static_cast<std::size_t>(cell)].push_back({score, {inst.id, pred}});
  }
  for (std::size_t c = 0; c < 4; ++c) {
    std::sort(ranked[c].begin(), ranked[c].end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second.id < b.second.id;
    });
    for (auto& [score, entry] : ranked[c]) out.lists[c].push_back(entry);
  }
  return out;
}

template <typename T>
CategorizedTestSet categorize(const BasicNetworkParams<T>& params, const LabeledDataset& test_set) {
  if (test_set.empty()) throw Error(ErrorCode::InvalidArgument, "cannot categorize an empty test set");
  std::vector<Prediction> preds;
  preds.reserve(test_set.size());
  for (const auto& inst : test_set.instances()) preds.push_back(predict(params, inst));
  return categorize_predictions(test_set, preds);
}

// Checkpoint layout (all integers little-endian u32):
//   "SEQXCNN1" | version | input_side | conv1_filters | conv2_filters |
//   kernel_side | head_inputs | tensor_count | per tensor: element count,
//   then that many little-endian float32 values
// Tensor order: block1 conv weight, conv bias, bn gamma, bn beta, bn
// running mean, bn running var, the same six for block2, head weight, head
// bias.
inline constexpr std::string_view kCheckpointMagic = "SEQXCNN1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const NetworkParams& params, const std::filesystem::path& path) {
  std::vector<unsigned char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  auto put32 = [&out](std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<unsigned char>(v >> s));
  };
  put32(kCheckpointVersion);
  put32(kImageSide);
  put32(kConv1Filters);
  put32(kConv2Filters);
  put32(kKernelSide);
  put32(kHeadInputs);
  const auto tensors = all_tensors(params);
  put32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    put32(static_cast<std::uint32_t>(tensor->size()));
    for (float v : *tensor) put32(std::bit_cast<std::uint32_t>(v));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error(ErrorCode::IoFailure, "failed writing " + path.string());
}

inline NetworkParams load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  std::size_t pos = 0;
  auto get32 = [&]() {
    if (pos + 4 > bytes.size()) throw Error(ErrorCode::BadCheckpoint, path.string() + " is truncated");
    std::uint32_t v = 0;
    for (int s = 0; s < 4; ++s) v |= std::uint32_t{bytes[pos + s]} << (8 * s);
    pos += 4;
    return v;
  };
  if (bytes.size() < kCheckpointMagic.size() ||
      std::string_view(reinterpret_cast<const char*>(bytes.data()), kCheckpointMagic.size()) !=
          kCheckpointMagic) {
    throw Error(ErrorCode::BadCheckpoint, path.string() + " is not a model checkpoint");
  }
  pos = kCheckpointMagic.size();
  const std::array<std::uint32_t, 6> expected = {kCheckpointVersion, kImageSide,  kConv1Filters,
                                                 kConv2Filters,      kKernelSide, kHeadInputs};
  for (auto e : expected) {
    if (get32() != e) throw Error(ErrorCode::BadCheckpoint, "unsupported architecture descriptor");
  }
  auto params = NetworkParams::zeros();
  auto tensors = all_tensors(params);
  if (get32() != tensors.size()) throw Error(ErrorCode::BadCheckpoint, "unexpected tensor count");
  for (auto& [name, tensor] : tensors) {
    if (get32() != tensor->size()) {
      throw Error(ErrorCode::BadCheckpoint, "size mismatch for tensor " + std::string(name));
    }
    for (auto& v : *tensor) v = std::bit_cast<float>(get32());
  }
  if (pos != bytes.size()) throw Error(ErrorCode::BadCheckpoint, path.string() + " has trailing bytes");
  if (!params_valid(params)) throw Error(ErrorCode::BadCheckpoint, "checkpoint holds invalid parameters");
  return params;
}

}  // namespace seqx
