// SPDX-License-Identifier: Apache-2.0
#include "hdriqa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "hdriqa/error.hpp"

namespace hdriqa {

using nn::Tensor;

namespace {

constexpr std::size_t kNoImage = std::numeric_limits<std::size_t>::max();

class ImageCache {
 public:
  const HdrImage& luminance_of(const std::filesystem::path& path) {
    const std::string key = path.lexically_normal().string();
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, luminance(read_image(path))).first;
    return it->second;
  }

 private:
  std::map<std::string, HdrImage> cache_;
};

void append_image(TrainingSet& set, const PreparedImage& dist, const std::vector<double>& delta,
                  double dmos, std::size_t image) {
  for (std::size_t k = 0; k < delta.size(); ++k) {
    set.enet_input.push_back(dist.enet_input[k]);
    set.features.push_back(dist.features[k]);
    set.delta.push_back(delta[k]);
    set.image_dmos.push_back(dmos);
    set.image_index.push_back(image);
  }
}

// Starts an untouched softplus head at the median target. From the default
// zero bias the head sits near ln 2, hundreds of times above typical targets,
// and the first updates drive it into the flat tail where gradients vanish.
void init_head_bias(nn::ParameterSet& params, const std::string& name, std::vector<double> targets,
                    double scale) {
  const auto idx = params.find(name);
  if (!idx || params[*idx].step != 0) return;
  std::vector<double> pos;
  for (double t : targets) {
    if (t * scale > 0.0) pos.push_back(t * scale);
  }
  if (pos.empty()) return;
  std::nth_element(pos.begin(), pos.begin() + pos.size() / 2, pos.end());
  params[*idx].value.fill(softplus_inverse(pos[pos.size() / 2]));
}

// Sets k so that the median patch of the calibration sample starts on target:
// k = median(atanh(target) * T / delta_hat). Only an untouched kappa is moved.
void init_kappa(ModelBundle& bundle, PNet& pnet, const TrainingSet& data,
                const std::vector<std::size_t>& picked, const std::vector<double>& delta_hat) {
  std::vector<double> ratios;
  for (std::size_t start = 0; start < picked.size(); start += 64) {
    const std::size_t end = std::min(picked.size(), start + 64);
    std::vector<const FeatureStack*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&data.features[picked[i]]);
    const Tensor t = pnet.forward(bundle.pnet, make_pnet_batch(batch));
    for (std::size_t i = start; i < end; ++i) {
      const double target = std::min(0.99, data.image_dmos[picked[i]] / bundle.config.d_scale);
      const double d = delta_hat[picked[i]];
      if (target > 0.0 && d > 0.0) ratios.push_back(std::atanh(target) * t[i - start] / d);
    }
  }
  if (ratios.empty()) return;
  std::nth_element(ratios.begin(), ratios.begin() + ratios.size() / 2, ratios.end());
  const double k = ratios[ratios.size() / 2];
  if (k > 0.0 && std::isfinite(k)) bundle.mixing[0].value[0] = softplus_inverse(k);
}

}  // namespace

TrainingSet build_training_set(const DatasetManifest& manifest, const ModelConfig& config,
                               const PuCurve& curve, int stride, bool include_reference_pairs) {
  validate_manifest(manifest, false);
  TrainingSet set;
  set.image_count = manifest.entries.size();
  ImageCache cache;
  std::vector<std::string> refs_done;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    const HdrImage& ref = cache.luminance_of(e.reference);
    const HdrImage dist = luminance(read_image(e.distorted));
    if (ref.width != dist.width || ref.height != dist.height) {
      throw ValidationError("reference and distorted images differ in size for " +
                            e.distorted.string());
    }
    const PatchSet ref_patches = extract_patches(to_plane(ref), config.patch_size, stride);
    const PreparedImage prepared = prepare_image(dist, config, curve, stride);
    append_image(set, prepared, patch_delta(ref_patches, prepared.linear), e.dmos, i);

    const std::string key = e.reference.lexically_normal().string();
    if (include_reference_pairs && std::find(refs_done.begin(), refs_done.end(), key) == refs_done.end()) {
      refs_done.push_back(key);
      const PreparedImage self = prepare_image(ref, config, curve, stride);
      append_image(set, self, std::vector<double>(self.enet_input.size(), 0.0),
                   std::numeric_limits<double>::quiet_NaN(), kNoImage);
    }
  }
  return set;
}

StageResult train_stage1(ModelBundle& bundle, const TrainingSet& data, const TrainConfig& cfg,
                         std::uint64_t seed) {
  if (data.size() == 0) throw ValidationError("empty training set");
  if (cfg.batch_size == 0) throw ValidationError("batch size must be positive");
  ENet enet(bundle.config);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const double inv_peak = 1.0 / bundle.config.l_peak;
  init_head_bias(bundle.enet, "enet.head.bias", data.delta, inv_peak);
  StageResult result;
  for (int epoch = 0; epoch < cfg.stage1_epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(seed, 2 * static_cast<std::uint64_t>(epoch)));
    Rng drop_rng(derive_seed(seed, 2 * static_cast<std::uint64_t>(epoch) + 1));
    shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Plane*> batch;
      Tensor target({end - start});
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(&data.enet_input[order[i]]);
        target[i - start] = data.delta[order[i]] * inv_peak;
      }
      const Tensor pred =
          enet.forward(bundle.enet, make_enet_batch(batch, bundle.config.l_peak), true, &drop_rng);
      const nn::LossResult loss = nn::l1_loss(pred, target);
      nn::Gradients grads = bundle.enet.zero_grads();
      enet.backward(bundle.enet, loss.grad, grads);
      nn::adam_step(bundle.enet, grads, cfg.adam);
      loss_sum += loss.value * static_cast<double>(end - start);
    }
    const double mean = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(mean)) throw NumericError("stage 1 diverged at epoch " + std::to_string(epoch));
    result.epoch_loss.push_back(mean);
    if (cfg.on_epoch) cfg.on_epoch({1, epoch, mean});
  }
  return result;
}

StageResult train_stage2(ModelBundle& bundle, const TrainingSet& data, const TrainConfig& cfg,
                         std::uint64_t seed) {
  if (cfg.batch_size == 0) throw ValidationError("batch size must be positive");
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.image_index[i] != kNoImage) order.push_back(i);
  }
  if (order.empty()) throw ValidationError("empty training set");

  bundle.enet.set_trainable(false);

  // E-Net is frozen and runs without dropout, so its outputs are fixed.
  std::vector<double> delta_hat(data.size(), 0.0);
  {
    ENet enet(bundle.config);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Plane*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&data.enet_input[order[i]]);
      const Tensor d =
          enet.forward(bundle.enet, make_enet_batch(batch, bundle.config.l_peak), false, nullptr);
      for (std::size_t i = start; i < end; ++i) delta_hat[order[i]] = d[i - start];
    }
  }

  PNet pnet(bundle.config);
  {
    std::vector<FeatureStack> calib;
    std::vector<std::size_t> picked;
    const std::size_t n = std::min(cfg.calibration_patches, order.size());
    for (std::size_t i = 0; i < n; ++i) picked.push_back(order[i * order.size() / n]);
    for (std::size_t i : picked) calib.push_back(data.features[i]);
    calibrate_augmented_layer(bundle, calib);
    if (bundle.mixing[0].step == 0) init_kappa(bundle, pnet, data, picked, delta_hat);
  }

  const double inv_scale = 1.0 / bundle.config.d_scale;
  StageResult result;
  for (int epoch = 0; epoch < cfg.stage2_epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(seed ^ 0x5EC0D57A6Eull, static_cast<std::uint64_t>(epoch)));
    shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::size_t n = end - start;
      std::vector<const FeatureStack*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&data.features[order[i]]);
      const Tensor t = pnet.forward(bundle.pnet, make_pnet_batch(batch));
      const double kappa = bundle.kappa();
      Tensor pred({n});
      Tensor target({n});
      for (std::size_t i = 0; i < n; ++i) {
        pred[i] = mix(delta_hat[order[start + i]], t[i], kappa);
        target[i] = data.image_dmos[order[start + i]] * inv_scale;
      }
      const nn::LossResult loss = nn::l1_loss(pred, target);
      Tensor grad_t({n});
      nn::Gradients mix_grads = bundle.mixing.zero_grads();
      for (std::size_t i = 0; i < n; ++i) {
        const MixGrad g = mix_backward(delta_hat[order[start + i]], t[i], kappa, loss.grad[i]);
        grad_t[i] = g.d_t;
        mix_grads[0][0] += g.d_kappa;
      }
      nn::Gradients pnet_grads = bundle.pnet.zero_grads();
      pnet.backward(bundle.pnet, grad_t, pnet_grads);
      nn::adam_step(bundle.pnet, pnet_grads, cfg.adam);
      nn::adam_step(bundle.mixing, mix_grads, cfg.adam);
      loss_sum += loss.value * static_cast<double>(n);
    }
    const double mean = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(mean)) throw NumericError("stage 2 diverged at epoch " + std::to_string(epoch));
    result.epoch_loss.push_back(mean);
    if (cfg.on_epoch) cfg.on_epoch({2, epoch, mean});
  }
  return result;
}

namespace {

PuCurve curve_for(const ModelConfig& config) {
  return config.domain == InputDomain::pu ? default_pu_curve() : PuCurve{};
}

}  // namespace

ModelBundle train_stage1(const DatasetManifest& manifest, const ModelConfig& config,
                         const TrainConfig& cfg, std::uint64_t seed) {
  ModelBundle bundle = create_bundle(config, seed);
  const TrainingSet data =
      build_training_set(manifest, config, curve_for(config), cfg.stride, cfg.include_reference_pairs);
  train_stage1(bundle, data, cfg, seed);
  return bundle;
}

ModelBundle train_stage2(const DatasetManifest& manifest, const TrainConfig& cfg, ModelBundle stage1,
                         std::uint64_t seed) {
  const TrainingSet data =
      build_training_set(manifest, stage1.config, curve_for(stage1.config), cfg.stride, false);
  train_stage2(stage1, data, cfg, seed);
  return stage1;
}

ModelBundle train_model(const DatasetManifest& manifest, const ModelConfig& config,
                        const TrainConfig& cfg, std::uint64_t seed) {
  ModelBundle bundle = create_bundle(config, seed);
  const TrainingSet data =
      build_training_set(manifest, config, curve_for(config), cfg.stride, cfg.include_reference_pairs);
  train_stage1(bundle, data, cfg, seed);
  train_stage2(bundle, data, cfg, seed);
  return bundle;
}

}  // namespace hdriqa
