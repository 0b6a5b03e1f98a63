// SPDX-License-Identifier: Apache-2.0
#include "hdriqa/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Core>

#include "hdriqa/error.hpp"

namespace hdriqa::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

[[noreturn]] void shape_error(const std::string& what) { throw ValidationError(what); }

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != product(shape_)) shape_error("tensor data length does not match shape");
}

void Tensor::reshape(std::vector<std::size_t> shape) {
  if (product(shape) != data_.size()) shape_error("reshape changes element count");
  shape_ = std::move(shape);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::check_finite(std::string_view what) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw NumericError("non-finite value in " + std::string(what) + " at element " +
                         std::to_string(i));
    }
  }
}

std::string Tensor::shape_string() const {
  std::ostringstream ss;
  for (std::size_t i = 0; i < shape_.size(); ++i) ss << (i ? "x" : "") << shape_[i];
  return ss.str();
}

std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// ParameterSet

std::size_t ParameterSet::add(std::string name, Tensor init) {
  if (find(name)) shape_error("duplicate parameter name " + name);
  Parameter p;
  p.name = std::move(name);
  p.m = Tensor(init.shape());
  p.v = Tensor(init.shape());
  p.value = std::move(init);
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

std::optional<std::size_t> ParameterSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  return std::nullopt;
}

Gradients ParameterSet::zero_grads() const {
  Gradients g;
  g.reserve(params_.size());
  for (const auto& p : params_) g.emplace_back(p.value.shape());
  return g;
}

void ParameterSet::set_trainable(bool trainable) {
  for (auto& p : params_) p.trainable = trainable;
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::uint64_t ParameterSet::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& p : params_) {
    h = fnv1a(p.name.data(), p.name.size(), h);
    h = fnv1a(p.value.shape().data(), p.value.shape().size() * sizeof(std::size_t), h);
    h = fnv1a(p.value.data(), p.value.size() * sizeof(double), h);
  }
  return h;
}

void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.values()) v = uniform(rng, -limit, limit);
}

// ---------------------------------------------------------------------------
// Convolution via im2col

namespace {

struct ConvDims {
  std::size_t n, c, h, w, k, fh, fw, oh, ow;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
  if (input.rank() != 4) shape_error("conv2d input must be N x C x H x W");
  if (kernels.rank() != 4) shape_error("conv2d kernels must be K x C x Fh x Fw");
  ConvDims d{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernels.dim(0),
             kernels.dim(2), kernels.dim(3), 0, 0};
  if (kernels.dim(1) != d.c) {
    shape_error("conv2d channel mismatch: input " + input.shape_string() + ", kernels " +
                kernels.shape_string());
  }
  if (bias.size() != d.k) shape_error("conv2d bias length must equal kernel count");
  if (d.fh > d.h || d.fw > d.w || d.fh == 0 || d.fw == 0) {
    shape_error("conv2d kernel " + kernels.shape_string() + " larger than input " +
                input.shape_string());
  }
  d.oh = d.h - d.fh + 1;
  d.ow = d.w - d.fw + 1;
  return d;
}

// cols: (C*Fh*Fw) x ((n1-n0)*Oh*Ow), row-major, for samples [n0, n1).
void im2col(const Tensor& input, const ConvDims& d, std::size_t n0, std::size_t n1,
            std::vector<double>& cols) {
  const std::size_t ncols = (n1 - n0) * d.oh * d.ow;
  cols.resize(d.c * d.fh * d.fw * ncols);
  const double* in = input.data();
  for (std::size_t c = 0; c < d.c; ++c) {
    for (std::size_t ky = 0; ky < d.fh; ++ky) {
      for (std::size_t kx = 0; kx < d.fw; ++kx) {
        double* row = &cols[((c * d.fh + ky) * d.fw + kx) * ncols];
        for (std::size_t n = n0; n < n1; ++n) {
          const double* plane = in + (n * d.c + c) * d.h * d.w;
          for (std::size_t y = 0; y < d.oh; ++y) {
            const double* src = plane + (y + ky) * d.w + kx;
            std::copy(src, src + d.ow, row + ((n - n0) * d.oh + y) * d.ow);
          }
        }
      }
    }
  }
}

void col2im(const std::vector<double>& cols, const ConvDims& d, std::size_t n0, std::size_t n1,
            Tensor& grad_input) {
  const std::size_t ncols = (n1 - n0) * d.oh * d.ow;
  double* gi = grad_input.data();
  for (std::size_t c = 0; c < d.c; ++c) {
    for (std::size_t ky = 0; ky < d.fh; ++ky) {
      for (std::size_t kx = 0; kx < d.fw; ++kx) {
        const double* row = &cols[((c * d.fh + ky) * d.fw + kx) * ncols];
        for (std::size_t n = n0; n < n1; ++n) {
          double* plane = gi + (n * d.c + c) * d.h * d.w;
          for (std::size_t y = 0; y < d.oh; ++y) {
            double* dst = plane + (y + ky) * d.w + kx;
            const double* src = row + ((n - n0) * d.oh + y) * d.ow;
            for (std::size_t x = 0; x < d.ow; ++x) dst[x] += src[x];
          }
        }
      }
    }
  }
}

Tensor as4d(const Tensor& t) {
  if (t.rank() == 4) return t;
  if (t.rank() == 3) {
    Tensor r = t;
    r.reshape({1, t.dim(0), t.dim(1), t.dim(2)});
    return r;
  }
  shape_error("conv2d input must be C x H x W or N x C x H x W, got " + t.shape_string());
}

// Samples per im2col tile; keeps the column buffer near 2 MB.
std::size_t conv_chunk(const ConvDims& d) {
  const std::size_t per_sample = d.c * d.fh * d.fw * d.oh * d.ow;
  return std::clamp<std::size_t>((std::size_t{1} << 18) / std::max<std::size_t>(per_sample, 1), 1, d.n);
}

Tensor conv_forward(const Tensor& x, const Tensor& kernels, const Tensor& bias, const ConvDims& d) {
  const std::size_t hw = d.oh * d.ow;
  const std::size_t kk = d.c * d.fh * d.fw;
  const std::size_t chunk = conv_chunk(d);
  Tensor out({d.n, d.k, d.oh, d.ow});
  double* o = out.data();
  std::vector<double> cols;
  RowMat prod;
  for (std::size_t n0 = 0; n0 < d.n; n0 += chunk) {
    const std::size_t n1 = std::min(d.n, n0 + chunk);
    const std::size_t ncols = (n1 - n0) * hw;
    im2col(x, d, n0, n1, cols);
    prod.resize(d.k, ncols);
    prod.noalias() = CMapMat(kernels.data(), d.k, kk) * CMapMat(cols.data(), kk, ncols);
    for (std::size_t n = n0; n < n1; ++n) {
      for (std::size_t k = 0; k < d.k; ++k) {
        const double* src = prod.data() + k * ncols + (n - n0) * hw;
        double* dst = o + (n * d.k + k) * hw;
        const double b = bias[k];
        for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] + b;
      }
    }
  }
  return out;
}

void conv_backward(const Tensor& x, const Tensor& kernels, const Tensor& grad_out, const ConvDims& d,
                   Tensor* grad_input, Tensor& grad_kernels, Tensor& grad_bias) {
  const std::size_t hw = d.oh * d.ow;
  const std::size_t kk = d.c * d.fh * d.fw;
  if (grad_out.size() != d.n * d.k * hw) shape_error("conv2d grad_out shape mismatch");
  const std::size_t chunk = conv_chunk(d);
  if (grad_input) *grad_input = Tensor({d.n, d.c, d.h, d.w});
  std::vector<double> cols, gcols;
  RowMat g;
  const double* go = grad_out.data();
  for (std::size_t n0 = 0; n0 < d.n; n0 += chunk) {
    const std::size_t n1 = std::min(d.n, n0 + chunk);
    const std::size_t ncols = (n1 - n0) * hw;
    im2col(x, d, n0, n1, cols);
    // Rearrange N x K x HW into K x (N*HW).
    g.resize(d.k, ncols);
    for (std::size_t n = n0; n < n1; ++n) {
      for (std::size_t k = 0; k < d.k; ++k) {
        std::copy(go + (n * d.k + k) * hw, go + (n * d.k + k + 1) * hw, g.data() + k * ncols + (n - n0) * hw);
      }
    }
    MapMat(grad_kernels.data(), d.k, kk).noalias() += g * CMapMat(cols.data(), kk, ncols).transpose();
    for (std::size_t k = 0; k < d.k; ++k) grad_bias[k] += g.row(k).sum();
    if (grad_input) {
      gcols.resize(kk * ncols);
      MapMat(gcols.data(), kk, ncols).noalias() = CMapMat(kernels.data(), d.k, kk).transpose() * g;
      col2im(gcols, d, n0, n1, *grad_input);
    }
  }
}

}  // namespace

Tensor conv2d_valid(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
  const bool batched = input.rank() == 4;
  const Tensor x = as4d(input);
  const ConvDims d = conv_dims(x, kernels, bias);
  Tensor out = conv_forward(x, kernels, bias, d);
  if (!batched) out.reshape({d.k, d.oh, d.ow});
  return out;
}

void conv2d_valid_backward(const Tensor& input, const Tensor& kernels, const Tensor& grad_out,
                           Tensor* grad_input, Tensor& grad_kernels, Tensor& grad_bias) {
  const bool batched = input.rank() == 4;
  const Tensor x = as4d(input);
  const ConvDims d = conv_dims(x, kernels, grad_bias);
  if (!grad_kernels.same_shape(kernels)) shape_error("conv2d grad_kernels shape mismatch");
  conv_backward(x, kernels, grad_out, d, grad_input, grad_kernels, grad_bias);
  if (grad_input && !batched) grad_input->reshape(input.shape());
}

// ---------------------------------------------------------------------------
// Pooling

Tensor maxpool2(const Tensor& input, std::vector<std::uint32_t>* argmax) {
  const bool batched = input.rank() == 4;
  const Tensor x = as4d(input);
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < 2 || w < 2) shape_error("maxpool2 needs H, W >= 2, got " + input.shape_string());
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  if (argmax) argmax->assign(out.size(), 0);
  const double* in = x.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xo = 0; xo < ow; ++xo) {
        std::size_t best = base + (2 * y) * w + 2 * xo;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + (2 * y + dy) * w + 2 * xo + dx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (p * oh + y) * ow + xo;
        out[o] = in[best];
        if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  if (!batched) out.reshape({c, oh, ow});
  return out;
}

Tensor maxpool2_backward(const Tensor& grad_out, const std::vector<std::uint32_t>& argmax,
                         const std::vector<std::size_t>& input_shape) {
  if (grad_out.size() != argmax.size()) shape_error("maxpool2 grad_out shape mismatch");
  Tensor gi(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) gi[argmax[i]] += grad_out[i];
  return gi;
}

// ---------------------------------------------------------------------------
// Dense

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  if (weights.rank() != 2) shape_error("dense weights must be m x n");
  const std::size_t m = weights.dim(0), nin = weights.dim(1);
  if (bias.size() != m) shape_error("dense bias length must equal output size");
  const bool batched = input.rank() >= 2;
  const std::size_t batch = batched ? input.dim(0) : 1;
  if (input.size() != batch * nin) {
    shape_error("dense input " + input.shape_string() + " does not match weights " +
                weights.shape_string());
  }
  Tensor out(batched ? std::vector<std::size_t>{batch, m} : std::vector<std::size_t>{m});
  MapMat o(out.data(), batch, m);
  o.noalias() = CMapMat(input.data(), batch, nin) * CMapMat(weights.data(), m, nin).transpose();
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t j = 0; j < m; ++j) o(r, j) += bias[j];
  }
  return out;
}

void dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out,
                    Tensor* grad_input, Tensor& grad_weights, Tensor& grad_bias) {
  const std::size_t m = weights.dim(0), nin = weights.dim(1);
  const std::size_t batch = input.size() / nin;
  if (grad_out.size() != batch * m) shape_error("dense grad_out shape mismatch");
  if (!grad_weights.same_shape(weights)) shape_error("dense grad_weights shape mismatch");
  CMapMat g(grad_out.data(), batch, m);
  MapMat(grad_weights.data(), m, nin).noalias() += g.transpose() * CMapMat(input.data(), batch, nin);
  for (std::size_t j = 0; j < m; ++j) grad_bias[j] += g.col(j).sum();
  if (grad_input) {
    *grad_input = Tensor(input.shape());
    MapMat(grad_input->data(), batch, nin).noalias() = g * CMapMat(weights.data(), m, nin);
  }
}

// ---------------------------------------------------------------------------
// Activations

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor tanh_act(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = std::tanh(v);
  return y;
}

Tensor tanh_backward(const Tensor& y, const Tensor& grad_out) {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - y[i] * y[i];
  return g;
}

Tensor softplus_act(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = softplus(v);
  return y;
}

Tensor softplus_backward(const Tensor& x, const Tensor& grad_out) {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= sigmoid(x[i]);
  return g;
}

Tensor relu_act(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(x[i] > 0.0)) g[i] = 0.0;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Dropout

Tensor spatial_dropout(const Tensor& input, double rate, Rng& rng, bool training,
                       std::vector<double>* mask) {
  if (!(rate >= 0.0) || rate >= 1.0) {
    throw ValidationError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mask) mask->clear();
  if (!training || rate == 0.0) return input;
  if (input.rank() < 2) shape_error("spatial dropout expects N x C x ... input");
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t plane = input.size() / (n * c);
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor out = input;
  std::vector<double> local;
  std::vector<double>& m = mask ? *mask : local;
  m.resize(n * c);
  for (std::size_t i = 0; i < n * c; ++i) {
    m[i] = uniform01(rng) < rate ? 0.0 : keep_scale;
    double* p = out.data() + i * plane;
    for (std::size_t j = 0; j < plane; ++j) p[j] *= m[i];
  }
  return out;
}

Tensor spatial_dropout_backward(const Tensor& grad_out, const std::vector<double>& mask) {
  if (mask.empty()) return grad_out;
  Tensor g = grad_out;
  const std::size_t plane = g.size() / mask.size();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    double* p = g.data() + i * plane;
    for (std::size_t j = 0; j < plane; ++j) p[j] *= mask[i];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Loss and optimizer

LossResult l1_loss(const Tensor& pred, const Tensor& target) {
  if (pred.size() != target.size() || pred.empty()) {
    shape_error("l1_loss needs equal-length, non-empty tensors");
  }
  LossResult r;
  r.grad = Tensor(pred.shape());
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += std::abs(d);
    r.grad[i] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) * inv_n;
  }
  r.value = acc * inv_n;
  if (!std::isfinite(r.value)) throw NumericError("non-finite L1 loss");
  return r;
}

void adam_step(ParameterSet& params, const Gradients& grads, const AdamConfig& cfg) {
  if (grads.size() != params.size()) shape_error("gradient count does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    if (!grads[i].same_shape(params[i].value)) {
      shape_error("gradient shape mismatch for " + params[i].name);
    }
    for (double g : grads[i].values()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient for parameter " + params[i].name);
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (!p.trainable) continue;
    ++p.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.step));
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      p.m[j] = cfg.beta1 * p.m[j] + (1.0 - cfg.beta1) * g[j];
      p.v[j] = cfg.beta2 * p.v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = p.m[j] / bc1;
      const double vhat = p.v[j] / bc2;
      p.value[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Layers

Conv2d::Conv2d(ParameterSet& params, const std::string& name, std::size_t in_ch,
               std::size_t out_ch, std::size_t kh, std::size_t kw)
    : in_channels(in_ch), out_channels(out_ch), kernel_h(kh), kernel_w(kw) {
  weight = params.add(name + ".weight", Tensor({out_ch, in_ch, kh, kw}));
  bias = params.add(name + ".bias", Tensor({out_ch}));
}

void Conv2d::init(ParameterSet& params, Rng& rng) const {
  glorot_uniform(params[weight].value, in_channels * kernel_h * kernel_w,
                 out_channels * kernel_h * kernel_w, rng);
  params[bias].value.fill(0.0);
}

Tensor Conv2d::forward(const ParameterSet& params, const Tensor& x) {
  input_ = x;
  return conv2d_valid(x, params[weight].value, params[bias].value);
}

Tensor Conv2d::backward(const ParameterSet& params, const Tensor& grad_out, Gradients& grads,
                        bool want_input_grad) {
  Tensor gi;
  conv2d_valid_backward(input_, params[weight].value, grad_out, want_input_grad ? &gi : nullptr,
                        grads[weight], grads[bias]);
  return gi;
}

Dense::Dense(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out)
    : in_features(in), out_features(out) {
  weight = params.add(name + ".weight", Tensor({out, in}));
  bias = params.add(name + ".bias", Tensor({out}));
}

void Dense::init(ParameterSet& params, Rng& rng) const {
  glorot_uniform(params[weight].value, in_features, out_features, rng);
  params[bias].value.fill(0.0);
}

Tensor Dense::forward(const ParameterSet& params, const Tensor& x) {
  input_ = x;
  return dense(x, params[weight].value, params[bias].value);
}

Tensor Dense::backward(const ParameterSet& params, const Tensor& grad_out, Gradients& grads,
                       bool want_input_grad) {
  Tensor gi;
  dense_backward(input_, params[weight].value, grad_out, want_input_grad ? &gi : nullptr,
                 grads[weight], grads[bias]);
  return gi;
}

Tensor MaxPool2::forward(const Tensor& x) {
  input_shape_ = x.shape();
  return maxpool2(x, &argmax_);
}

Tensor MaxPool2::backward(const Tensor& grad_out) const {
  return maxpool2_backward(grad_out, argmax_, input_shape_);
}

std::uint64_t MaxPool2::signature() const {
  return fnv1a(argmax_.data(), argmax_.size() * sizeof(std::uint32_t));
}

Tensor Relu::forward(const Tensor& x) {
  input_ = x;
  return relu_act(x);
}

Tensor Relu::backward(const Tensor& grad_out) const { return relu_backward(input_, grad_out); }

std::uint64_t Relu::signature() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  std::uint64_t word = 0;
  for (std::size_t i = 0; i < input_.size(); ++i) {
    word = (word << 1) | (input_[i] > 0.0 ? 1u : 0u);
    if (i % 64 == 63) {
      h = fnv1a(&word, sizeof(word), h);
      word = 0;
    }
  }
  return fnv1a(&word, sizeof(word), h);
}

SpatialDropout::SpatialDropout(double rate) : rate_(rate) {
  if (!(rate >= 0.0) || rate >= 1.0) {
    throw ValidationError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
}

Tensor SpatialDropout::forward(const Tensor& x, Rng* rng, bool training) {
  active_ = training && rate_ > 0.0;
  if (!active_) {
    mask_.clear();
    return x;
  }
  if (!rng) throw ValidationError("training-mode dropout needs a random generator");
  return spatial_dropout(x, rate_, *rng, true, &mask_);
}

Tensor SpatialDropout::backward(const Tensor& grad_out) const {
  return active_ ? spatial_dropout_backward(grad_out, mask_) : grad_out;
}

// ---------------------------------------------------------------------------
// Gradient check

void GradCheckReport::merge(const GradCheckReport& other) {
  params.insert(params.end(), other.params.begin(), other.params.end());
  max_rel_error = std::max(max_rel_error, other.max_rel_error);
  passed = passed && other.passed;
}

GradCheckReport gradient_check(ParameterSet& params, const Gradients& analytic,
                               const LossFn& loss, const GradCheckOptions& options,
                               const SignatureFn& signature) {
  if (analytic.size() != params.size()) shape_error("gradient count does not match parameters");
  GradCheckReport report;
  Rng rng(options.seed);

  std::uint64_t base_sig = 0;
  if (signature) {
    loss();
    base_sig = signature();
  }

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = params[pi];
    ParamCheck pc;
    pc.name = p.name;
    std::vector<std::size_t> idx(p.value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (options.max_entries > 0 && idx.size() > options.max_entries) {
      shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_entries);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t j : idx) {
      const double theta = p.value[j];
      double h = std::max(1e-5, 1e-7 * std::abs(theta));
      std::optional<double> numeric;
      for (int attempt = 0; attempt <= options.max_shrinks; ++attempt, h *= 0.1) {
        p.value[j] = theta + h;
        const double lp = loss();
        const bool clean_p = !signature || signature() == base_sig;
        p.value[j] = theta - h;
        const double lm = loss();
        const bool clean_m = !signature || signature() == base_sig;
        p.value[j] = theta;
        if (clean_p && clean_m) {
          numeric = (lp - lm) / (2.0 * h);
          break;
        }
      }
      if (!numeric) {
        ++pc.skipped;
        continue;
      }
      const double a = analytic[pi][j];
      const double denom = std::max({std::abs(a), std::abs(*numeric), options.abs_floor});
      const double rel = std::abs(a - *numeric) / denom;
      pc.max_rel_error = std::max(pc.max_rel_error, rel);
      ++pc.checked;
    }
    pc.flagged = pc.max_rel_error > options.tolerance;
    report.max_rel_error = std::max(report.max_rel_error, pc.max_rel_error);
    report.passed = report.passed && !pc.flagged;
    report.params.push_back(std::move(pc));
  }
  if (signature) loss();
  return report;
}

}  // namespace hdriqa::nn
