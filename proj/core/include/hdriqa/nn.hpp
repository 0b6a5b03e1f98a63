// SPDX-License-Identifier: Apache-2.0
//
// Minimal differentiable layer stack. Every tensor is double precision and
// every layer carries a hand-written backward pass; gradient_check verifies
// them against central differences.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hdriqa/rng.hpp"

namespace hdriqa::nn {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Same element count required.
  void reshape(std::vector<std::size_t> shape);
  void fill(double v);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // NumericError naming `what` if any element is NaN or infinite.
  void check_finite(std::string_view what) const;

  std::string shape_string() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// One trainable tensor with its Adam state.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor m;
  Tensor v;
  std::int64_t step = 0;
  bool trainable = true;
};

using Gradients = std::vector<Tensor>;

class ParameterSet {
 public:
  // Returns the index of the new parameter.
  std::size_t add(std::string name, Tensor init);

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const { return params_.size(); }
  std::optional<std::size_t> find(std::string_view name) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  // Zero tensors shaped like every parameter.
  Gradients zero_grads() const;
  void set_trainable(bool trainable);
  std::size_t element_count() const;
  // FNV-1a over names, shapes and raw value bits.
  std::uint64_t hash() const;

 private:
  std::vector<Parameter> params_;
};

void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng);

// ---------------------------------------------------------------------------
// Stateless kernels. Image tensors are N x C x H x W.

// Valid cross-correlation plus bias. A 3-D C x H x W input is treated as N = 1
// and a 3-D result is returned.
Tensor conv2d_valid(const Tensor& input, const Tensor& kernels, const Tensor& bias);
// Accumulates into grad_kernels/grad_bias; writes grad_input when non-null.
void conv2d_valid_backward(const Tensor& input, const Tensor& kernels, const Tensor& grad_out,
                           Tensor* grad_input, Tensor& grad_kernels, Tensor& grad_bias);

// 2x2 non-overlapping max with floor semantics. `argmax` receives the flat
// input index of each output's winner.
Tensor maxpool2(const Tensor& input, std::vector<std::uint32_t>* argmax = nullptr);
Tensor maxpool2_backward(const Tensor& grad_out, const std::vector<std::uint32_t>& argmax,
                         const std::vector<std::size_t>& input_shape);

// y = W x + b. Input is N x n (or a vector of n), weights m x n.
Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);
void dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out,
                    Tensor* grad_input, Tensor& grad_weights, Tensor& grad_bias);

double softplus(double x);
double sigmoid(double x);

Tensor tanh_act(const Tensor& x);
Tensor tanh_backward(const Tensor& y, const Tensor& grad_out);  // y = tanh(x)
Tensor softplus_act(const Tensor& x);
Tensor softplus_backward(const Tensor& x, const Tensor& grad_out);
Tensor relu_act(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

// Zeroes whole channels with probability `rate` and scales survivors by
// 1 / (1 - rate) when training; identity otherwise. `mask` gets one entry per
// (n, c) pair holding the applied multiplier.
Tensor spatial_dropout(const Tensor& input, double rate, Rng& rng, bool training,
                       std::vector<double>* mask = nullptr);
Tensor spatial_dropout_backward(const Tensor& grad_out, const std::vector<double>& mask);

struct LossResult {
  double value = 0.0;
  Tensor grad;  // d value / d pred
};

// Mean absolute error; subgradient sign(pred - target) / n with sign(0) = 0.
LossResult l1_loss(const Tensor& pred, const Tensor& target);

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over trainable parameters. Frozen parameters are not
// touched at all. Non-finite gradients raise NumericError before any update.
void adam_step(ParameterSet& params, const Gradients& grads, const AdamConfig& cfg = {});

// ---------------------------------------------------------------------------
// Layers with cached activations

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterSet& params, const std::string& name, std::size_t in_ch, std::size_t out_ch,
         std::size_t kh, std::size_t kw);
  void init(ParameterSet& params, Rng& rng) const;
  Tensor forward(const ParameterSet& params, const Tensor& x);
  Tensor backward(const ParameterSet& params, const Tensor& grad_out, Gradients& grads,
                  bool want_input_grad = true);

  std::size_t weight = 0;
  std::size_t bias = 0;
  std::size_t in_channels = 0, out_channels = 0, kernel_h = 0, kernel_w = 0;

 private:
  Tensor input_;
};

class Dense {
 public:
  Dense() = default;
  Dense(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out);
  void init(ParameterSet& params, Rng& rng) const;
  Tensor forward(const ParameterSet& params, const Tensor& x);
  Tensor backward(const ParameterSet& params, const Tensor& grad_out, Gradients& grads,
                  bool want_input_grad = true);

  std::size_t weight = 0;
  std::size_t bias = 0;
  std::size_t in_features = 0, out_features = 0;

 private:
  Tensor input_;
};

class MaxPool2 {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out) const;
  const std::vector<std::uint32_t>& argmax() const { return argmax_; }
  std::uint64_t signature() const;

 private:
  std::vector<std::uint32_t> argmax_;
  std::vector<std::size_t> input_shape_;
};

class Relu {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out) const;
  // Hash of the active set; changes when a perturbation crosses the kink.
  std::uint64_t signature() const;

 private:
  Tensor input_;
};

class SpatialDropout {
 public:
  explicit SpatialDropout(double rate = 0.0);
  Tensor forward(const Tensor& x, Rng* rng, bool training);
  Tensor backward(const Tensor& grad_out) const;
  double rate() const { return rate_; }

 private:
  double rate_ = 0.0;
  std::vector<double> mask_;
  bool active_ = false;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

struct GradCheckOptions {
  double tolerance = 1e-4;
  // Entries sampled per parameter tensor; 0 checks every entry.
  std::size_t max_entries = 24;
  std::uint64_t seed = 0;
  // Denominator floor: gradients smaller than this are compared absolutely.
  double abs_floor = 1e-6;
  // Step shrinks tried when a perturbation flips a ReLU or pooling decision.
  int max_shrinks = 4;
};

struct ParamCheck {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // kink could not be avoided
  double max_rel_error = 0.0;
  bool flagged = false;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  bool passed = true;

  void merge(const GradCheckReport& other);
};

// Evaluates the loss at the current parameter values.
using LossFn = std::function<double()>;
// Piecewise-linear decisions taken by the most recent loss evaluation.
using SignatureFn = std::function<std::uint64_t()>;

// Compares `analytic` (d loss / d params, aligned with params) against central
// differences with step max(1e-5, 1e-7 |theta|). Parameters are restored.
GradCheckReport gradient_check(ParameterSet& params, const Gradients& analytic,
                               const LossFn& loss, const GradCheckOptions& options = {},
                               const SignatureFn& signature = {});

std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull);

}  // namespace hdriqa::nn
