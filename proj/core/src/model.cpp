// SPDX-License-Identifier: Apache-2.0
#include "hdriqa/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hdriqa/error.hpp"
#include "hdriqa/io.hpp"

namespace hdriqa {

using nn::Tensor;

std::string ModelConfig::fingerprint() const {
  std::ostringstream ss;
  ss << "hdriqa-arch-v1;patch=" << patch_size << ";enet=";
  static constexpr int kEnetKernels[4] = {7, 5, 3, 1};
  for (std::size_t i = 0; i < enet_channels.size(); ++i) {
    ss << (i ? "," : "") << enet_channels[i] << "x" << kEnetKernels[i];
  }
  ss << ";pnet=";
  for (std::size_t i = 0; i < pnet_channels.size(); ++i) ss << (i ? "," : "") << pnet_channels[i] << "x3";
  ss << ";pool=" << (pnet_pool ? 1 : 0) << ";dense=";
  for (std::size_t i = 0; i < pnet_dense.size(); ++i) ss << (i ? "," : "") << pnet_dense[i];
  ss << ";act=relu;window=" << window.size << ";domain=" << to_string(domain);
  return ss.str();
}

void ModelConfig::validate() const {
  if (enet_channels.size() != 4) throw ValidationError("E-Net needs exactly 4 conv widths");
  if (pnet_channels.size() != 2) throw ValidationError("P-Net needs exactly 2 conv widths");
  for (int c : enet_channels) {
    if (c <= 0) throw ValidationError("E-Net widths must be positive");
  }
  for (int c : pnet_channels) {
    if (c <= 0) throw ValidationError("P-Net widths must be positive");
  }
  for (int c : pnet_dense) {
    if (c <= 0) throw ValidationError("P-Net dense widths must be positive");
  }
  // 7x7 conv, pool, 5x5 conv, pool, 3x3 conv, pool must leave at least 1 pixel.
  int s = patch_size;
  for (int k : {7, 5, 3}) {
    s = s - k + 1;
    if (s < 2) throw ValidationError("patch size too small for E-Net");
    s /= 2;
  }
  if (patch_size < window.size) throw ValidationError("patch smaller than Gaussian window");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must be in [0, 1)");
  if (!(l_peak > 0.0) || !(d_scale > 0.0) || !(t_epsilon > 0.0)) {
    throw ValidationError("l_peak, d_scale and t_epsilon must be positive");
  }
}

// ---------------------------------------------------------------------------
// Mixing

double mix(double delta_hat, double t_resist, double kappa) {
  if (!(t_resist > 0.0)) {
    throw NumericError("mixing layer received non-positive error resistance " +
                       std::to_string(t_resist));
  }
  return std::tanh(nn::softplus(kappa) * delta_hat / t_resist);
}

MixGrad mix_backward(double delta_hat, double t_resist, double kappa, double grad_out) {
  const double k = nn::softplus(kappa);
  const double y = std::tanh(k * delta_hat / t_resist);
  const double g = grad_out * (1.0 - y * y);
  MixGrad r;
  r.d_delta = g * k / t_resist;
  r.d_t = -g * k * delta_hat / (t_resist * t_resist);
  r.d_kappa = g * delta_hat / t_resist * nn::sigmoid(kappa);
  return r;
}

double softplus_inverse(double k) {
  if (!(k > 0.0)) throw ValidationError("softplus_inverse needs k > 0");
  return k > 30.0 ? k + std::log(-std::expm1(-k)) : std::log(std::expm1(k));
}

// ---------------------------------------------------------------------------
// E-Net

ENet::ENet(const ModelConfig& config) : patch_size_(static_cast<std::size_t>(config.patch_size)) {
  config.validate();
  static constexpr std::size_t kKernels[4] = {7, 5, 3, 1};
  std::size_t in = 1;
  std::size_t s = config.patch_size;
  for (int i = 0; i < 4; ++i) {
    const auto out = static_cast<std::size_t>(config.enet_channels[i]);
    conv_[i] = nn::Conv2d(layout_, "enet.conv" + std::to_string(i + 1), in, out, kKernels[i],
                          kKernels[i]);
    s = s - kKernels[i] + 1;
    if (i < 3) {
      s /= 2;
      drop_.emplace_back(config.dropout);
    }
    in = out;
  }
  head_ = nn::Dense(layout_, "enet.head", in * s * s, 1);
}

void ENet::init(nn::ParameterSet& params, Rng& rng) const {
  for (const auto& c : conv_) c.init(params, rng);
  head_.init(params, rng);
}

Tensor ENet::forward(const nn::ParameterSet& params, const Tensor& x, bool training, Rng* rng) {
  const std::size_t s = patch_size_;
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != s || x.dim(3) != s) {
    throw ValidationError("E-Net expects N x 1 x " + std::to_string(s) + " x " + std::to_string(s) +
                          " input, got " + x.shape_string());
  }
  trace_.assign(1, x.dim(2));
  Tensor h = x;
  for (int i = 0; i < 4; ++i) {
    h = conv_[i].forward(params, h);
    if (h.dim(2) != trace_.back()) trace_.push_back(h.dim(2));
    h = relu_[i].forward(h);
    if (i < 3) {
      h = pool_[i].forward(h);
      trace_.push_back(h.dim(2));
      h = drop_[i].forward(h, rng, training);
    }
  }
  const std::size_t n = h.dim(0);
  h.reshape({n, h.size() / n});
  head_pre_ = head_.forward(params, h);
  Tensor out = nn::softplus_act(head_pre_);
  out.reshape({n});
  out.check_finite("E-Net output");
  return out;
}

Tensor ENet::backward(const nn::ParameterSet& params, const Tensor& grad_out, nn::Gradients& grads,
                      bool want_input_grad) {
  Tensor g = grad_out;
  g.reshape(head_pre_.shape());
  g = nn::softplus_backward(head_pre_, g);
  g = head_.backward(params, g, grads);
  const std::size_t n = g.dim(0);
  const std::size_t c = conv_[3].out_channels;
  const std::size_t s = static_cast<std::size_t>(std::lround(std::sqrt(g.size() / (n * c))));
  g.reshape({n, c, s, s});
  for (int i = 3; i >= 0; --i) {
    if (i < 3) {
      g = drop_[i].backward(g);
      g = pool_[i].backward(g);
    }
    g = relu_[i].backward(g);
    g = conv_[i].backward(params, g, grads, i > 0 || want_input_grad);
  }
  return g;
}

std::uint64_t ENet::signature() const {
  std::uint64_t h = 0;
  for (const auto& r : relu_) h = h * 31 + r.signature();
  for (const auto& p : pool_) h = h * 31 + p.signature();
  return h;
}

// ---------------------------------------------------------------------------
// P-Net

PNet::PNet(const ModelConfig& config) : pool_enabled_(config.pnet_pool), t_epsilon_(config.t_epsilon) {
  config.validate();
  aug_ = layout_.add("pnet.augment", Tensor({3}, 1.0));
  std::size_t in = 3;
  std::size_t s = config.patch_size;
  for (int i = 0; i < 2; ++i) {
    const auto out = static_cast<std::size_t>(config.pnet_channels[i]);
    conv_[i] = nn::Conv2d(layout_, "pnet.conv" + std::to_string(i + 1), in, out, 3, 3);
    s -= 2;
    if (pool_enabled_) s /= 2;
    in = out;
  }
  std::size_t width = in * s * s;
  for (std::size_t i = 0; i < config.pnet_dense.size(); ++i) {
    const auto out = static_cast<std::size_t>(config.pnet_dense[i]);
    dense_.emplace_back(layout_, "pnet.dense" + std::to_string(i + 1), width, out);
    dense_relu_.emplace_back();
    width = out;
  }
  dense_.emplace_back(layout_, "pnet.head", width, 1);
}

void PNet::init(nn::ParameterSet& params, Rng& rng) const {
  params[aug_].value.fill(1.0);
  for (const auto& c : conv_) c.init(params, rng);
  for (const auto& d : dense_) d.init(params, rng);
}

Tensor PNet::forward(const nn::ParameterSet& params, const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != 3) {
    throw ValidationError("P-Net expects N x 3 x S x S input, got " + x.shape_string());
  }
  input_ = x;
  Tensor h = x;
  const std::size_t n = x.dim(0);
  const std::size_t plane = x.dim(2) * x.dim(3);
  const Tensor& w = params[aug_].value;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < 3; ++c) {
      double* p = h.data() + (b * 3 + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] *= w[c];
    }
  }
  for (int i = 0; i < 2; ++i) {
    h = conv_[i].forward(params, h);
    h = relu_[i].forward(h);
    if (pool_enabled_) h = pool_[i].forward(h);
  }
  h.reshape({n, h.size() / n});
  for (std::size_t i = 0; i + 1 < dense_.size(); ++i) {
    h = dense_[i].forward(params, h);
    h = dense_relu_[i].forward(h);
  }
  head_pre_ = dense_.back().forward(params, h);
  Tensor out = nn::softplus_act(head_pre_);
  out.reshape({n});
  for (double& v : out.values()) v += t_epsilon_;
  out.check_finite("P-Net output");
  return out;
}

Tensor PNet::backward(const nn::ParameterSet& params, const Tensor& grad_out, nn::Gradients& grads,
                      bool want_input_grad) {
  Tensor g = grad_out;
  g.reshape(head_pre_.shape());
  g = nn::softplus_backward(head_pre_, g);
  g = dense_.back().backward(params, g, grads);
  for (std::size_t i = dense_.size() - 1; i-- > 0;) {
    g = dense_relu_[i].backward(g);
    g = dense_[i].backward(params, g, grads);
  }
  const std::size_t n = input_.dim(0);
  const std::size_t c = conv_[1].out_channels;
  const std::size_t s = static_cast<std::size_t>(std::lround(std::sqrt(g.size() / (n * c))));
  g.reshape({n, c, s, s});
  for (int i = 1; i >= 0; --i) {
    if (pool_enabled_) g = pool_[i].backward(g);
    g = relu_[i].backward(g);
    g = conv_[i].backward(params, g, grads, true);
  }
  // g is now d loss / d (W_c * x_c).
  const std::size_t plane = input_.dim(2) * input_.dim(3);
  const Tensor& w = params[aug_].value;
  Tensor& gw = grads[aug_];
  Tensor gin(input_.shape());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double* gp = g.data() + (b * 3 + ch) * plane;
      const double* xp = input_.data() + (b * 3 + ch) * plane;
      double* gi = gin.data() + (b * 3 + ch) * plane;
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        acc += gp[i] * xp[i];
        gi[i] = gp[i] * w[ch];
      }
      gw[ch] += acc;
    }
  }
  return want_input_grad ? gin : Tensor();
}

std::uint64_t PNet::signature() const {
  std::uint64_t h = 0;
  for (const auto& r : relu_) h = h * 31 + r.signature();
  for (const auto& r : dense_relu_) h = h * 31 + r.signature();
  if (pool_enabled_) {
    for (const auto& p : pool_) h = h * 31 + p.signature();
  }
  return h;
}

// ---------------------------------------------------------------------------
// Bundle

double ModelBundle::k() const { return nn::softplus(kappa()); }

ModelBundle create_bundle(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelBundle b;
  b.config = config;
  Rng rng(seed);
  const ENet enet(config);
  const PNet pnet(config);
  b.enet = enet.create_parameters();
  b.pnet = pnet.create_parameters();
  enet.init(b.enet, rng);
  pnet.init(b.pnet, rng);
  b.mixing.add("mix.kappa", Tensor({1}, softplus_inverse(1.0)));
  return b;
}

void calibrate_augmented_layer(ModelBundle& bundle, const std::vector<FeatureStack>& stacks) {
  const auto idx = bundle.pnet.find("pnet.augment");
  if (!idx) throw ValidationError("bundle has no augmented layer");
  double sq[3] = {0.0, 0.0, 0.0};
  std::size_t count = 0;
  for (const auto& fs : stacks) {
    const Plane* ch[3] = {&fs.lum, &fs.var, &fs.mscn};
    for (int c = 0; c < 3; ++c) {
      for (double v : ch[c]->data) sq[c] += v * v;
    }
    count += fs.lum.size();
  }
  auto& w = bundle.pnet[*idx].value;
  for (int c = 0; c < 3; ++c) {
    const double rms = count ? std::sqrt(sq[c] / static_cast<double>(count)) : 0.0;
    w[c] = rms > 0.0 ? 1.0 / rms : 1.0;
  }
}

// ---------------------------------------------------------------------------
// Batching and inference

Tensor make_enet_batch(const std::vector<const Plane*>& patches, double scale) {
  if (patches.empty()) throw ValidationError("empty batch");
  const std::size_t s = static_cast<std::size_t>(patches.front()->width);
  Tensor t({patches.size(), 1, s, s});
  const double inv = 1.0 / scale;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const Plane& p = *patches[i];
    if (static_cast<std::size_t>(p.width) != s || static_cast<std::size_t>(p.height) != s) {
      throw ValidationError("patch batch has inconsistent sizes");
    }
    for (std::size_t j = 0; j < s * s; ++j) t[i * s * s + j] = p.data[j] * inv;
  }
  return t;
}

Tensor make_pnet_batch(const std::vector<const FeatureStack*>& stacks) {
  if (stacks.empty()) throw ValidationError("empty batch");
  const std::size_t s = static_cast<std::size_t>(stacks.front()->lum.width);
  const std::size_t plane = s * s;
  Tensor t({stacks.size(), 3, s, s});
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    const Plane* ch[3] = {&stacks[i]->lum, &stacks[i]->var, &stacks[i]->mscn};
    for (int c = 0; c < 3; ++c) {
      if (ch[c]->size() != plane) throw ValidationError("feature stack has the wrong size");
      std::copy(ch[c]->data.begin(), ch[c]->data.end(), t.data() + (i * 3 + c) * plane);
    }
  }
  return t;
}

PreparedImage prepare_image(const HdrImage& image, const ModelConfig& config, const PuCurve& curve,
                            int stride) {
  const HdrImage lum = luminance(image);
  PreparedImage out;
  out.linear = extract_patches(to_plane(lum), config.patch_size, stride);
  const double peak = input_domain_peak(config.domain, config.l_peak, curve);
  if (config.domain == InputDomain::linear) {
    for (const auto& p : out.linear.patches) {
      out.enet_input.push_back(p);
      out.features.push_back(feature_stack(p, config.window));
    }
  } else {
    const PatchSet dom =
        extract_patches(to_plane(apply_input_domain(lum, config.domain, curve)), config.patch_size,
                        stride);
    for (const auto& p : dom.patches) {
      out.enet_input.push_back(p);
      out.features.push_back(feature_stack(p, config.window));
    }
  }
  // ENet batches are scaled at batch time; store the domain peak ratio here so
  // that every caller divides by l_peak only.
  if (peak != config.l_peak) {
    const double r = config.l_peak / peak;
    for (auto& p : out.enet_input) {
      for (double& v : p.data) v *= r;
    }
  }
  return out;
}

std::vector<PatchPrediction> predict_patches(const ModelBundle& bundle, const PreparedImage& prepared,
                                             std::size_t batch_size) {
  ENet enet(bundle.config);
  PNet pnet(bundle.config);
  const std::size_t n = prepared.enet_input.size();
  std::vector<PatchPrediction> out(n);
  const double kappa = bundle.kappa();
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    std::vector<const Plane*> lum;
    std::vector<const FeatureStack*> feats;
    for (std::size_t i = start; i < end; ++i) {
      lum.push_back(&prepared.enet_input[i]);
      feats.push_back(&prepared.features[i]);
    }
    const Tensor d = enet.forward(bundle.enet, make_enet_batch(lum, bundle.config.l_peak), false, nullptr);
    const Tensor t = pnet.forward(bundle.pnet, make_pnet_batch(feats));
    for (std::size_t i = start; i < end; ++i) {
      auto& p = out[i];
      p.delta_hat = d[i - start];
      p.t_resist = t[i - start];
      p.dmos_patch = mix(p.delta_hat, p.t_resist, kappa);
    }
  }
  return out;
}


ImagePrediction predict_image(const ModelBundle& bundle, const HdrImage& image, const PuCurve& curve,
                              int stride) {
  if (stride <= 0) stride = bundle.config.patch_size;
  const PreparedImage prepared = prepare_image(image, bundle.config, curve, stride);
  const auto preds = predict_patches(bundle, prepared);
  ImagePrediction r;
  r.qmap = empty_map(prepared.linear);
  r.tmap = r.qmap;
  r.dmap = r.qmap;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    r.qmap.values[i] = preds[i].dmos_patch;
    r.tmap.values[i] = preds[i].t_resist;
    r.dmap.values[i] = preds[i].delta_hat;
  }
  r.score = bundle.config.d_scale * r.qmap.mean();
  return r;
}

ImagePrediction predict_image(const ModelBundle& bundle, const HdrImage& image) {
  if (bundle.config.domain == InputDomain::pu) {
    return predict_image(bundle, image, default_pu_curve(), 0);
  }
  return predict_image(bundle, image, PuCurve{}, 0);
}

}  // namespace hdriqa
