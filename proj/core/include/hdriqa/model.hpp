// SPDX-License-Identifier: Apache-2.0
//
// Noise estimator (E-Net), error-resistance estimator (P-Net) and the tanh
// mixing layer that turns their outputs into a per-patch DMOS.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hdriqa/image.hpp"
#include "hdriqa/nn.hpp"
#include "hdriqa/preprocess.hpp"
#include "hdriqa/quality_map.hpp"

namespace hdriqa {

struct ModelConfig {
  int patch_size = 32;
  // E-Net: conv7 -> pool -> conv5 -> pool -> conv3 -> pool -> conv1 -> dense(1).
  std::vector<int> enet_channels{64, 128, 256, 512};
  // P-Net: conv3 -> [pool] -> conv3 -> [pool] -> dense -> dense -> dense(1).
  std::vector<int> pnet_channels{64, 128};
  std::vector<int> pnet_dense{100, 100};
  // Drops the P-Net pools when false (about 10M dense weights at 32px).
  bool pnet_pool = true;
  double dropout = 0.25;
  double l_peak = 4000.0;
  double d_scale = 100.0;
  double t_epsilon = 1e-3;
  InputDomain domain = InputDomain::linear;
  GaussianWindow window;

  // Canonical architecture string; bundles refuse to load under another one.
  std::string fingerprint() const;
  void validate() const;
};

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& json);

// Mixing law: tanh(softplus(kappa) * delta / t).
double mix(double delta_hat, double t_resist, double kappa);

struct MixGrad {
  double d_delta = 0.0;
  double d_t = 0.0;
  double d_kappa = 0.0;
};
MixGrad mix_backward(double delta_hat, double t_resist, double kappa, double grad_out);

// Inverse of softplus, used to initialize kappa from a desired k.
double softplus_inverse(double k);

class ENet {
 public:
  explicit ENet(const ModelConfig& config);

  // Fresh parameter set in the layout this network indexes (zero-valued).
  nn::ParameterSet create_parameters() const { return layout_; }
  void init(nn::ParameterSet& params, Rng& rng) const;

  // x: N x 1 x S x S, luminance / peak. Returns N predicted noise levels >= 0.
  nn::Tensor forward(const nn::ParameterSet& params, const nn::Tensor& x, bool training,
                     Rng* rng);
  nn::Tensor backward(const nn::ParameterSet& params, const nn::Tensor& grad_out,
                      nn::Gradients& grads, bool want_input_grad = false);

  std::uint64_t signature() const;
  // Spatial size after each conv and pool stage of the last forward pass.
  const std::vector<std::size_t>& shape_trace() const { return trace_; }

 private:
  nn::ParameterSet layout_;
  std::size_t patch_size_;
  nn::Conv2d conv_[4];
  nn::Relu relu_[4];
  nn::MaxPool2 pool_[3];
  std::vector<nn::SpatialDropout> drop_;
  nn::Dense head_;
  nn::Tensor head_pre_;
  std::vector<std::size_t> trace_;
};

class PNet {
 public:
  explicit PNet(const ModelConfig& config);

  nn::ParameterSet create_parameters() const { return layout_; }
  void init(nn::ParameterSet& params, Rng& rng) const;

  // x: N x 3 x S x S raw feature stacks (lum, var, mscn). Returns N values of T > 0.
  nn::Tensor forward(const nn::ParameterSet& params, const nn::Tensor& x);
  nn::Tensor backward(const nn::ParameterSet& params, const nn::Tensor& grad_out,
                      nn::Gradients& grads, bool want_input_grad = false);

  std::uint64_t signature() const;
  std::size_t augment_index() const { return aug_; }

 private:
  bool pool_enabled_;
  double t_epsilon_;
  nn::ParameterSet layout_;
  std::size_t aug_ = 0;
  nn::Conv2d conv_[2];
  nn::Relu relu_[2];
  nn::MaxPool2 pool_[2];
  std::vector<nn::Dense> dense_;
  std::vector<nn::Relu> dense_relu_;
  nn::Tensor input_;
  nn::Tensor head_pre_;
};

struct ModelBundle {
  ModelConfig config;
  nn::ParameterSet enet;
  nn::ParameterSet pnet;
  nn::ParameterSet mixing;  // single entry "mix.kappa"

  double kappa() const { return mixing[0].value[0]; }
  double k() const;
};

// Glorot-initialized bundle, augmented weights at 1, k = 1.
ModelBundle create_bundle(const ModelConfig& config, std::uint64_t seed);

// Sets W_c = 1 / rms(channel c) over the given stacks (1 where the rms is 0).
void calibrate_augmented_layer(ModelBundle& bundle, const std::vector<FeatureStack>& stacks);

// ---------------------------------------------------------------------------
// Batching

nn::Tensor make_enet_batch(const std::vector<const Plane*>& patches, double scale);
nn::Tensor make_pnet_batch(const std::vector<const FeatureStack*>& stacks);

// Patches and features of one image in the model's input domain.
struct PreparedImage {
  PatchSet linear;                      // linear luminance patches
  std::vector<Plane> enet_input;        // domain patch / domain peak
  std::vector<FeatureStack> features;   // from the domain patch
};

PreparedImage prepare_image(const HdrImage& image, const ModelConfig& config,
                            const PuCurve& curve, int stride);

struct PatchPrediction {
  double delta_hat = 0.0;
  double t_resist = 0.0;
  double dmos_patch = 0.0;
};

// Inference-mode predictions for every patch of a prepared image.
std::vector<PatchPrediction> predict_patches(const ModelBundle& bundle,
                                             const PreparedImage& prepared,
                                             std::size_t batch_size = 64);

struct ImagePrediction {
  double score = 0.0;  // D_scale * mean(dmos_patch)
  QualityMap qmap;     // dmos_patch
  QualityMap tmap;     // t_resist
  QualityMap dmap;     // delta_hat, in units of L_peak
};

ImagePrediction predict_image(const ModelBundle& bundle, const HdrImage& image,
                              const PuCurve& curve, int stride = 0);
ImagePrediction predict_image(const ModelBundle& bundle, const HdrImage& image);

// ---------------------------------------------------------------------------
// Weight files

// JSON header (format version, config, fingerprint, tensor directory,
// checksum) followed by little-endian IEEE-754 doubles.
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path);
std::string serialize_bundle(const ModelBundle& bundle);
ModelBundle load_bundle(const std::filesystem::path& path);
// Additionally requires the stored fingerprint to equal expected.fingerprint().
ModelBundle load_bundle(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace hdriqa
