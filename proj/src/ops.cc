// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tfcn/ops.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

namespace tfcn {

namespace {

// All inner loops are written as independent per-element updates so that an
// output element sees the same ordered sequence of roundings no matter how
// many frames a call covers.
template <typename T>
inline void axpy(T* dst, const T* src, T w, int n) {
  for (int i = 0; i < n; ++i) dst[i] = dst[i] + w * src[i];
}

// Gradient reductions only; eight interleaved partial sums.
template <typename T>
inline double dot(const T* a, const T* b, int n) {
  T lane[8] = {};
  int i = 0;
  for (; i + 8 <= n; i += 8)
    for (int k = 0; k < 8; ++k) lane[k] += a[i + k] * b[i + k];
  double acc = 0.0;
  for (; i < n; ++i) acc += double(a[i]) * b[i];
  for (int k = 0; k < 8; ++k) acc += lane[k];
  return acc;
}

std::string axis_error(const char* op, const char* axis, const std::string& msg) {
  return std::string(op) + ": " + axis + " axis: " + msg;
}

// Copies one batch item into a zero-padded (C, Fp, Tp) buffer.
template <typename T>
void pad_item(const BasicTensor<T>& input, int n, const Padding2& pad,
              std::vector<T>& out, int fp, int tp) {
  const int channels = input.channels();
  const int freq = input.freq();
  const int time = input.time();
  out.assign(static_cast<std::size_t>(channels) * fp * tp, T(0));
  for (int c = 0; c < channels; ++c) {
    const T* src = input.plane(n, c).data();
    T* dst = out.data() + static_cast<std::size_t>(c) * fp * tp;
    for (int f = 0; f < freq; ++f)
      std::copy(src + static_cast<std::size_t>(f) * time,
                src + static_cast<std::size_t>(f + 1) * time,
                dst + static_cast<std::size_t>(f + pad.left_f) * tp +
                    pad.left_t);
  }
}

struct ConvGeometry {
  int freq, time;  // input
  int fp, tp;      // padded input
  int fo, to;      // output
  bool pointwise;  // 1×1 kernel, no padding
};

ConvGeometry conv_geometry(const Shape& in, const ConvSpec& spec,
                           const char* op) {
  spec.validate();
  if (in.channels != spec.in_channels)
    throw ShapeError(axis_error(op, "channel",
                                "input has " + std::to_string(in.channels) +
                                    " channels, layer expects " +
                                    std::to_string(spec.in_channels)));
  ConvGeometry g{};
  g.freq = in.freq;
  g.time = in.time;
  g.fp = in.freq + spec.pad.left_f + spec.pad.right_f;
  g.tp = in.time + spec.pad.left_t + spec.pad.right_t;
  const Extent2 ext = spec.dilated_extent();
  if (g.fp < ext.freq)
    throw ShapeError(axis_error(
        op, "freq",
        "padded extent " + std::to_string(g.fp) +
            " is smaller than the dilated kernel extent " +
            std::to_string(ext.freq)));
  if (g.tp < ext.time)
    throw ShapeError(axis_error(
        op, "time",
        "padded extent " + std::to_string(g.tp) +
            " is smaller than the dilated kernel extent " +
            std::to_string(ext.time)));
  g.fo = g.fp - ext.freq + 1;
  g.to = g.tp - ext.time + 1;
  g.pointwise = spec.kernel.freq == 1 && spec.kernel.time == 1 &&
                spec.pad == Padding2{};
  return g;
}

template <typename T>
void check_weights(std::span<const T> weights, std::span<const T> bias,
                   const ConvSpec& spec, const char* op) {
  if (weights.size() != spec.weight_count())
    throw ShapeError(std::string(op) + ": expected " +
                     std::to_string(spec.weight_count()) + " weights, got " +
                     std::to_string(weights.size()));
  const std::size_t want_bias = spec.has_bias ? spec.out_channels : 0;
  if (bias.size() != want_bias)
    throw ShapeError(std::string(op) + ": expected " +
                     std::to_string(want_bias) + " bias terms, got " +
                     std::to_string(bias.size()));
}

template <typename T>
void conv_direct_item(const T* padded, std::span<const T> weights,
                      std::span<const T> bias, const ConvSpec& spec,
                      const ConvGeometry& g, BasicTensor<T>& out, int n) {
  const int cin_g = spec.in_per_group();
  const int cout_g = spec.out_per_group();
  const int kf = spec.kernel.freq;
  const int kt = spec.kernel.time;
  const int df = spec.dilation.freq;
  const int dt = spec.dilation.time;
  const std::size_t in_plane = static_cast<std::size_t>(g.fp) * g.tp;
  const std::size_t out_plane = static_cast<std::size_t>(g.fo) * g.to;

  if (g.pointwise) {
    constexpr std::size_t kTile = 1024;
    for (int grp = 0; grp < spec.groups; ++grp) {
      for (std::size_t s0 = 0; s0 < out_plane; s0 += kTile) {
        const int len = static_cast<int>(std::min(kTile, out_plane - s0));
        for (int oo = 0; oo < cout_g; ++oo) {
          const int o = grp * cout_g + oo;
          T* acc = out.plane(n, o).data() + s0;
          std::fill(acc, acc + len, bias.empty() ? T(0) : bias[o]);
          const T* w = weights.data() + static_cast<std::size_t>(o) * cin_g;
          for (int ci = 0; ci < cin_g; ++ci) {
            const T* x = padded + (grp * cin_g + ci) * in_plane + s0;
            axpy(acc, x, w[ci], len);
          }
        }
      }
    }
    return;
  }

  for (int o = 0; o < spec.out_channels; ++o) {
    const int grp = o / cout_g;
    T* acc = out.plane(n, o).data();
    std::fill(acc, acc + out_plane, bias.empty() ? T(0) : bias[o]);
    for (int ci = 0; ci < cin_g; ++ci) {
      const T* src = padded + (grp * cin_g + ci) * in_plane;
      const T* w = weights.data() +
                   (static_cast<std::size_t>(o) * cin_g + ci) * kf * kt;
      for (int a = 0; a < kf; ++a) {
        for (int b = 0; b < kt; ++b) {
          const T wv = w[a * kt + b];
          for (int fo = 0; fo < g.fo; ++fo) {
            const T* row = src +
                           static_cast<std::size_t>(fo + a * df) * g.tp +
                           b * dt;
            axpy(acc + static_cast<std::size_t>(fo) * g.to, row, wv, g.to);
          }
        }
      }
    }
  }
}

template <typename T>
void conv_im2col_item(const T* padded, std::span<const T> weights,
                      std::span<const T> bias, const ConvSpec& spec,
                      const ConvGeometry& g, BasicTensor<T>& out, int n) {
  using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic,
                               Eigen::RowMajor>;
  const int cin_g = spec.in_per_group();
  const int cout_g = spec.out_per_group();
  const int kf = spec.kernel.freq;
  const int kt = spec.kernel.time;
  const int rows = cin_g * kf * kt;
  const int cols = g.fo * g.to;
  const std::size_t in_plane = static_cast<std::size_t>(g.fp) * g.tp;
  RowMat col(rows, cols);
  for (int grp = 0; grp < spec.groups; ++grp) {
    for (int ci = 0; ci < cin_g; ++ci) {
      const T* src = padded + (grp * cin_g + ci) * in_plane;
      for (int a = 0; a < kf; ++a)
        for (int b = 0; b < kt; ++b) {
          T* dst = col.data() +
                   static_cast<std::size_t>((ci * kf + a) * kt + b) * cols;
          for (int fo = 0; fo < g.fo; ++fo) {
            const T* row = src +
                           static_cast<std::size_t>(fo + a * spec.dilation.freq) *
                               g.tp +
                           b * spec.dilation.time;
            std::copy(row, row + g.to, dst + static_cast<std::size_t>(fo) * g.to);
          }
        }
    }
    Eigen::Map<const RowMat> w(
        weights.data() + static_cast<std::size_t>(grp) * cout_g * rows,
        cout_g, rows);
    Eigen::Map<RowMat> dst(out.plane(n, grp * cout_g).data(), cout_g, cols);
    dst.noalias() = w * col;
    if (!bias.empty())
      for (int oo = 0; oo < cout_g; ++oo)
        dst.row(oo).array() += bias[grp * cout_g + oo];
  }
}

}  // namespace

void ConvSpec::validate() const {
  if (in_channels <= 0 || out_channels <= 0 || groups <= 0)
    throw ShapeError("conv spec: channel counts and groups must be positive");
  if (in_channels % groups != 0 || out_channels % groups != 0)
    throw ShapeError("conv spec: channels " + std::to_string(in_channels) +
                     "->" + std::to_string(out_channels) +
                     " not divisible by groups " + std::to_string(groups));
  if (kernel.freq <= 0 || kernel.time <= 0)
    throw ShapeError("conv spec: kernel extents must be positive");
  if (dilation.freq <= 0 || dilation.time <= 0)
    throw ShapeError("conv spec: dilations must be positive");
  if (pad.left_f < 0 || pad.right_f < 0 || pad.left_t < 0 || pad.right_t < 0)
    throw ShapeError("conv spec: padding must be non-negative");
}

Extent2 ConvSpec::output_extent(int freq, int time) const {
  const Extent2 ext = dilated_extent();
  return {freq + pad.left_f + pad.right_f - ext.freq + 1,
          time + pad.left_t + pad.right_t - ext.time + 1};
}

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input,
                              std::span<const T> weights, const ConvSpec& spec,
                              std::span<const T> bias, ConvAlgorithm algo) {
  const ConvGeometry g = conv_geometry(input.shape(), spec, "conv2d_forward");
  check_weights(weights, bias, spec, "conv2d_forward");
  BasicTensor<T> out(Shape{input.batch(), spec.out_channels, g.fo, g.to});
  std::vector<T> scratch;
  for (int n = 0; n < input.batch(); ++n) {
    const T* padded;
    if (spec.pad == Padding2{}) {
      padded = input.plane(n, 0).data();
    } else {
      pad_item(input, n, spec.pad, scratch, g.fp, g.tp);
      padded = scratch.data();
    }
    if (algo == ConvAlgorithm::kIm2col)
      conv_im2col_item(padded, weights, bias, spec, g, out, n);
    else
      conv_direct_item(padded, weights, bias, spec, g, out, n);
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& grad_out,
                             const BasicTensor<T>& input,
                             std::span<const T> weights, const ConvSpec& spec) {
  const ConvGeometry g = conv_geometry(input.shape(), spec, "conv2d_backward");
  if (weights.size() != spec.weight_count())
    throw ShapeError("conv2d_backward: context holds " +
                     std::to_string(weights.size()) + " weights, layer has " +
                     std::to_string(spec.weight_count()));
  require_same_shape(grad_out.shape(),
                     Shape{input.batch(), spec.out_channels, g.fo, g.to},
                     "conv2d_backward: grad_out does not match forward output");

  const int cin_g = spec.in_per_group();
  const int cout_g = spec.out_per_group();
  const int kf = spec.kernel.freq;
  const int kt = spec.kernel.time;
  const int df = spec.dilation.freq;
  const int dt = spec.dilation.time;
  const std::size_t in_plane = static_cast<std::size_t>(g.fp) * g.tp;
  const std::size_t out_plane = static_cast<std::size_t>(g.fo) * g.to;

  std::vector<double> gw(spec.weight_count(), 0.0);
  std::vector<double> gb(spec.has_bias ? spec.out_channels : 0, 0.0);
  BasicTensor<T> grad_in(input.shape());
  std::vector<T> padded_buf;
  std::vector<T> grad_padded;

  for (int n = 0; n < input.batch(); ++n) {
    const T* padded;
    const bool unpadded = spec.pad == Padding2{};
    if (unpadded) {
      padded = input.plane(n, 0).data();
    } else {
      pad_item(input, n, spec.pad, padded_buf, g.fp, g.tp);
      padded = padded_buf.data();
    }
    grad_padded.assign(static_cast<std::size_t>(spec.in_channels) * in_plane,
                       T(0));

    if (g.pointwise) {
      using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>;
      const auto cols = static_cast<Eigen::Index>(out_plane);
      for (int grp = 0; grp < spec.groups; ++grp) {
        Eigen::Map<const RowMat> go(grad_out.plane(n, grp * cout_g).data(),
                                    cout_g, cols);
        Eigen::Map<const RowMat> x(padded + grp * cin_g * in_plane, cin_g, cols);
        Eigen::Map<const RowMat> w(
            weights.data() + static_cast<std::size_t>(grp) * cout_g * cin_g,
            cout_g, cin_g);
        const RowMat gw_item = go * x.transpose();
        for (int oo = 0; oo < cout_g; ++oo)
          for (int ci = 0; ci < cin_g; ++ci)
            gw[(static_cast<std::size_t>(grp) * cout_g + oo) * cin_g + ci] +=
                gw_item(oo, ci);
        Eigen::Map<RowMat> gx(grad_padded.data() + grp * cin_g * in_plane,
                              cin_g, cols);
        gx.noalias() += w.transpose() * go;
      }
    }

    for (int o = 0; o < spec.out_channels; ++o) {
      const int grp = o / cout_g;
      const T* go = grad_out.plane(n, o).data();
      if (spec.has_bias) {
        double s = 0.0;
        for (std::size_t i = 0; i < out_plane; ++i) s += go[i];
        gb[o] += s;
      }
      for (int ci = 0; ci < cin_g; ++ci) {
        const int c = grp * cin_g + ci;
        const T* src = padded + c * in_plane;
        T* gsrc = grad_padded.data() + c * in_plane;
        const std::size_t wbase =
            (static_cast<std::size_t>(o) * cin_g + ci) * kf * kt;
        if (g.pointwise) continue;
        for (int a = 0; a < kf; ++a) {
          for (int b = 0; b < kt; ++b) {
            const T wv = weights[wbase + a * kt + b];
            double s = 0.0;
            for (int fo = 0; fo < g.fo; ++fo) {
              const std::size_t off =
                  static_cast<std::size_t>(fo + a * df) * g.tp + b * dt;
              const T* grow = go + static_cast<std::size_t>(fo) * g.to;
              s += dot(grow, src + off, g.to);
              axpy(gsrc + off, grow, wv, g.to);
            }
            gw[wbase + a * kt + b] += s;
          }
        }
      }
    }

    for (int c = 0; c < spec.in_channels; ++c) {
      const T* gsrc = grad_padded.data() + c * in_plane;
      T* dst = grad_in.plane(n, c).data();
      for (int f = 0; f < g.freq; ++f)
        std::copy(gsrc + static_cast<std::size_t>(f + spec.pad.left_f) * g.tp +
                      spec.pad.left_t,
                  gsrc + static_cast<std::size_t>(f + spec.pad.left_f) * g.tp +
                      spec.pad.left_t + g.time,
                  dst + static_cast<std::size_t>(f) * g.time);
    }
  }

  ConvGrads<T> grads;
  grads.input = std::move(grad_in);
  grads.weights.assign(gw.begin(), gw.end());
  grads.bias.assign(gb.begin(), gb.end());
  return grads;
}

template <typename T>
BatchNormState<T>::BatchNormState(int channels)
    : gamma(channels, T(1)),
      beta(channels, T(0)),
      running_mean(channels, T(0)),
      running_var(channels, T(1)) {}

namespace {

// Applies the normalisation with fixed per-channel statistics. Train mode
// evaluates γ·x̂ + β, inference mode the folded x·scale + shift.
template <typename T>
BasicTensor<T> batchnorm_apply(const BasicTensor<T>& input,
                               const BatchNormState<T>& state, NormMode mode,
                               std::span<const T> mean,
                               std::span<const T> inv_std,
                               BasicTensor<T>* normalized) {
  BasicTensor<T> out(input.shape());
  const std::size_t plane = input.shape().plane();
  for (int c = 0; c < input.channels(); ++c) {
    const T m = mean[c];
    const T istd = inv_std[c];
    const T scale = state.gamma[c] * istd;
    const T shift = state.beta[c] - m * scale;
    for (int n = 0; n < input.batch(); ++n) {
      const T* x = input.plane(n, c).data();
      T* y = out.plane(n, c).data();
      T* xh = normalized ? normalized->plane(n, c).data() : nullptr;
      if (mode == NormMode::kTrain) {
        for (std::size_t i = 0; i < plane; ++i) {
          const T h = (x[i] - m) * istd;
          if (xh) xh[i] = h;
          y[i] = state.gamma[c] * h + state.beta[c];
        }
      } else {
        for (std::size_t i = 0; i < plane; ++i) y[i] = x[i] * scale + shift;
        if (xh)
          for (std::size_t i = 0; i < plane; ++i) xh[i] = (x[i] - m) * istd;
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
BasicTensor<T> batchnorm_forward(const BasicTensor<T>& input,
                                 BatchNormState<T>& state,
                                 BatchNormCache<T>* cache) {
  const int channels = input.channels();
  if (channels != state.channels() ||
      state.beta.size() != state.gamma.size() ||
      state.running_mean.size() != state.gamma.size() ||
      state.running_var.size() != state.gamma.size())
    throw ShapeError(axis_error("batchnorm_forward", "channel",
                                "input has " + std::to_string(channels) +
                                    " channels, state has " +
                                    std::to_string(state.channels())));
  const std::size_t count = input.shape().plane() * input.batch();
  std::vector<T> mean(channels);
  std::vector<T> inv_std(channels);

  for (int c = 0; c < channels; ++c) {
    if (state.mode == NormMode::kTrain) {
      if (count == 0) throw ShapeError("batchnorm_forward: empty batch");
      double sum = 0.0;
      for (int n = 0; n < input.batch(); ++n)
        for (T v : input.plane(n, c)) sum += v;
      const double mu = sum / static_cast<double>(count);
      double sq = 0.0;
      for (int n = 0; n < input.batch(); ++n)
        for (T v : input.plane(n, c)) {
          const double d = v - mu;
          sq += d * d;
        }
      const double var = sq / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(
          1.0 / std::sqrt(var + static_cast<double>(state.epsilon)));
      const double unbiased =
          count > 1 ? var * static_cast<double>(count) / (count - 1) : var;
      const double momentum = state.momentum;
      state.running_mean[c] = static_cast<T>(
          (1.0 - momentum) * state.running_mean[c] + momentum * mu);
      state.running_var[c] = static_cast<T>(
          (1.0 - momentum) * state.running_var[c] + momentum * unbiased);
    } else {
      if (!(state.running_var[c] > T(0)))
        throw Error("batchnorm_forward: running variance must be positive");
      mean[c] = state.running_mean[c];
      inv_std[c] = T(1) / std::sqrt(state.running_var[c] + state.epsilon);
    }
  }

  BasicTensor<T>* normalized = nullptr;
  if (cache) {
    cache->normalized = BasicTensor<T>(input.shape());
    cache->mode = state.mode;
    normalized = &cache->normalized;
  }
  BasicTensor<T> out = batchnorm_apply<T>(input, state, state.mode, mean,
                                          inv_std, normalized);
  if (cache) {
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
BasicTensor<T> batchnorm_replay(const BasicTensor<T>& input,
                                const BatchNormState<T>& state,
                                BatchNormCache<T>& cache) {
  if (cache.mean.size() != static_cast<std::size_t>(input.channels()) ||
      cache.inv_std.size() != cache.mean.size())
    throw ShapeError("batchnorm_replay: cache does not match input channels");
  cache.normalized = BasicTensor<T>(input.shape());
  return batchnorm_apply<T>(input, state, cache.mode, cache.mean,
                            cache.inv_std, &cache.normalized);
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BasicTensor<T>& grad_out,
                                     const BatchNormCache<T>& cache,
                                     const BatchNormState<T>& state) {
  require_same_shape(grad_out.shape(), cache.normalized.shape(),
                     "batchnorm_backward");
  const int channels = grad_out.channels();
  if (channels != state.channels() ||
      cache.inv_std.size() != static_cast<std::size_t>(channels))
    throw ShapeError("batchnorm_backward: channel count does not match cache");
  const std::size_t plane = grad_out.shape().plane();
  const double count = static_cast<double>(plane * grad_out.batch());

  BatchNormGrads<T> grads;
  grads.input = BasicTensor<T>(grad_out.shape());
  grads.gamma.assign(channels, T(0));
  grads.beta.assign(channels, T(0));
  for (int c = 0; c < channels; ++c) {
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (int n = 0; n < grad_out.batch(); ++n) {
      const T* g = grad_out.plane(n, c).data();
      const T* xh = cache.normalized.plane(n, c).data();
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += g[i];
        sum_gx += static_cast<double>(g[i]) * xh[i];
      }
    }
    grads.gamma[c] = static_cast<T>(sum_gx);
    grads.beta[c] = static_cast<T>(sum_g);
    const T gamma = state.gamma[c];
    const T istd = cache.inv_std[c];
    if (cache.mode == NormMode::kInference) {
      const T scale = gamma * istd;
      for (int n = 0; n < grad_out.batch(); ++n) {
        const T* g = grad_out.plane(n, c).data();
        T* dx = grads.input.plane(n, c).data();
        for (std::size_t i = 0; i < plane; ++i) dx[i] = g[i] * scale;
      }
      continue;
    }
    // dx = γ·σ⁻¹·(g − mean(g) − x̂·mean(g·x̂))
    const T mean_g = static_cast<T>(sum_g / count);
    const T mean_gx = static_cast<T>(sum_gx / count);
    const T scale = gamma * istd;
    for (int n = 0; n < grad_out.batch(); ++n) {
      const T* g = grad_out.plane(n, c).data();
      const T* xh = cache.normalized.plane(n, c).data();
      T* dx = grads.input.plane(n, c).data();
      for (std::size_t i = 0; i < plane; ++i)
        dx[i] = scale * (g[i] - mean_g - xh[i] * mean_gx);
    }
  }
  return grads;
}

template <typename T>
PReluState<T>::PReluState(AlphaSharing mode, int channels, T init)
    : alpha(mode == AlphaSharing::kShared ? 1 : channels, init), sharing(mode) {}

namespace {
template <typename T>
void check_prelu(const BasicTensor<T>& input, const PReluState<T>& state,
                 const char* op) {
  const std::size_t want =
      state.sharing == AlphaSharing::kShared ? 1 : input.channels();
  if (state.alpha.size() != want)
    throw ShapeError(axis_error(op, "channel",
                                "alpha has " + std::to_string(state.alpha.size()) +
                                    " entries, expected " + std::to_string(want)));
}
}  // namespace

template <typename T>
BasicTensor<T> prelu_forward(const BasicTensor<T>& input,
                             const PReluState<T>& state) {
  check_prelu(input, state, "prelu_forward");
  BasicTensor<T> out(input.shape());
  for (int n = 0; n < input.batch(); ++n)
    for (int c = 0; c < input.channels(); ++c) {
      const T a = state.alpha[state.sharing == AlphaSharing::kShared ? 0 : c];
      const auto x = input.plane(n, c);
      auto y = out.plane(n, c);
      for (std::size_t i = 0; i < x.size(); ++i)
        y[i] = x[i] >= T(0) ? x[i] : a * x[i];
    }
  return out;
}

template <typename T>
PReluGrads<T> prelu_backward(const BasicTensor<T>& grad_out,
                             const BasicTensor<T>& input,
                             const PReluState<T>& state) {
  check_prelu(input, state, "prelu_backward");
  require_same_shape(grad_out.shape(), input.shape(), "prelu_backward");
  PReluGrads<T> grads;
  grads.input = BasicTensor<T>(input.shape());
  std::vector<double> ga(state.alpha.size(), 0.0);
  for (int n = 0; n < input.batch(); ++n)
    for (int c = 0; c < input.channels(); ++c) {
      const int k = state.sharing == AlphaSharing::kShared ? 0 : c;
      const T a = state.alpha[k];
      const auto x = input.plane(n, c);
      const auto g = grad_out.plane(n, c);
      auto dx = grads.input.plane(n, c);
      double s = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] >= T(0)) {
          dx[i] = g[i];
        } else {
          dx[i] = a * g[i];
          s += static_cast<double>(x[i]) * g[i];
        }
      }
      ga[k] += s;
    }
  grads.alpha.assign(ga.begin(), ga.end());
  return grads;
}

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const> inputs) {
  if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape first = inputs[0]->shape();
  int channels = 0;
  for (const BasicTensor<T>* t : inputs) {
    const Shape& s = t->shape();
    if (s.batch != first.batch || s.freq != first.freq || s.time != first.time)
      require_same_shape(Shape{s.batch, first.channels, s.freq, s.time}, first,
                         "concat_channels");
    channels += s.channels;
  }
  BasicTensor<T> out(Shape{first.batch, channels, first.freq, first.time});
  for (int n = 0; n < first.batch; ++n) {
    int c0 = 0;
    for (const BasicTensor<T>* t : inputs) {
      for (int c = 0; c < t->channels(); ++c) {
        const auto src = t->plane(n, c);
        std::copy(src.begin(), src.end(), out.plane(n, c0 + c).begin());
      }
      c0 += t->channels();
    }
  }
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>& grad_out,
                                           std::span<const int> channels) {
  int total = 0;
  for (int c : channels) total += c;
  if (total != grad_out.channels())
    throw ShapeError(axis_error("split_channels", "channel",
                                "pieces sum to " + std::to_string(total) +
                                    ", tensor has " +
                                    std::to_string(grad_out.channels())));
  std::vector<BasicTensor<T>> out;
  out.reserve(channels.size());
  int c0 = 0;
  for (int count : channels) {
    BasicTensor<T> piece(
        Shape{grad_out.batch(), count, grad_out.freq(), grad_out.time()});
    for (int n = 0; n < grad_out.batch(); ++n)
      for (int c = 0; c < count; ++c) {
        const auto src = grad_out.plane(n, c0 + c);
        std::copy(src.begin(), src.end(), piece.plane(n, c).begin());
      }
    c0 += count;
    out.push_back(std::move(piece));
  }
  return out;
}

template <typename T>
BasicTensor<T> add_residual(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add_residual");
  BasicTensor<T> out(a.shape());
  const auto x = a.values();
  const auto y = b.values();
  auto z = out.values();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
  return out;
}

template <typename T>
void accumulate(BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "accumulate");
  auto x = a.values();
  const auto y = b.values();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = x[i] + y[i];
}

#define TFCN_INSTANTIATE_OPS(T)                                              \
  template BasicTensor<T> conv2d_forward<T>(const BasicTensor<T>&,           \
                                            std::span<const T>,              \
                                            const ConvSpec&,                 \
                                            std::span<const T>, ConvAlgorithm); \
  template ConvGrads<T> conv2d_backward<T>(const BasicTensor<T>&,            \
                                           const BasicTensor<T>&,            \
                                           std::span<const T>,               \
                                           const ConvSpec&);                 \
  template struct BatchNormState<T>;                                         \
  template BasicTensor<T> batchnorm_forward<T>(                              \
      const BasicTensor<T>&, BatchNormState<T>&, BatchNormCache<T>*);        \
  template BasicTensor<T> batchnorm_replay<T>(                               \
      const BasicTensor<T>&, const BatchNormState<T>&, BatchNormCache<T>&);  \
  template BatchNormGrads<T> batchnorm_backward<T>(                          \
      const BasicTensor<T>&, const BatchNormCache<T>&,                       \
      const BatchNormState<T>&);                                             \
  template struct PReluState<T>;                                             \
  template BasicTensor<T> prelu_forward<T>(const BasicTensor<T>&,            \
                                           const PReluState<T>&);            \
  template PReluGrads<T> prelu_backward<T>(                                  \
      const BasicTensor<T>&, const BasicTensor<T>&, const PReluState<T>&);   \
  template BasicTensor<T> concat_channels<T>(                                \
      std::span<const BasicTensor<T>* const>);                               \
  template std::vector<BasicTensor<T>> split_channels<T>(                    \
      const BasicTensor<T>&, std::span<const int>);                          \
  template BasicTensor<T> add_residual<T>(const BasicTensor<T>&,             \
                                          const BasicTensor<T>&);            \
  template void accumulate<T>(BasicTensor<T>&, const BasicTensor<T>&);

TFCN_INSTANTIATE_OPS(float)
TFCN_INSTANTIATE_OPS(double)

#undef TFCN_INSTANTIATE_OPS

}  // namespace tfcn
