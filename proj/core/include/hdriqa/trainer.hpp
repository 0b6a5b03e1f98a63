// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hdriqa/io.hpp"
#include "hdriqa/model.hpp"

namespace hdriqa {

struct EpochLog {
  int stage = 1;
  int epoch = 0;
  double mean_loss = 0.0;
};

struct TrainConfig {
  int stage1_epochs = 12;
  int stage2_epochs = 24;
  std::size_t batch_size = 64;
  int stride = 32;
  nn::AdamConfig adam;
  // Adds every reference against itself (zero noise) to the stage-1 set.
  bool include_reference_pairs = true;
  // Feature stacks used to calibrate the augmented layer before stage 2.
  std::size_t calibration_patches = 512;
  std::function<void(const EpochLog&)> on_epoch;
};

// Patch-level training data drawn from a manifest.
struct TrainingSet {
  std::vector<Plane> enet_input;          // domain patch scaled to luminance units
  std::vector<FeatureStack> features;
  std::vector<double> delta;              // mean |ref - dist| per patch, cd/m^2
  std::vector<double> image_dmos;         // manifest DMOS of the patch's image
  std::vector<std::size_t> image_index;   // manifest entry, or npos for reference pairs
  std::size_t image_count = 0;

  std::size_t size() const { return delta.size(); }
};

TrainingSet build_training_set(const DatasetManifest& manifest, const ModelConfig& config,
                               const PuCurve& curve, int stride, bool include_reference_pairs);

struct StageResult {
  std::vector<double> epoch_loss;
};

// E-Net against delta / L_peak with L1 loss. Only E-Net parameters move.
StageResult train_stage1(ModelBundle& bundle, const TrainingSet& data, const TrainConfig& cfg,
                         std::uint64_t seed);

// Freezes E-Net, calibrates the augmented layer, then trains P-Net and kappa
// so that tanh(k * delta_hat / T) matches the image DMOS / D_scale per patch.
StageResult train_stage2(ModelBundle& bundle, const TrainingSet& data, const TrainConfig& cfg,
                         std::uint64_t seed);

ModelBundle train_stage1(const DatasetManifest& manifest, const ModelConfig& config,
                         const TrainConfig& cfg, std::uint64_t seed);
ModelBundle train_stage2(const DatasetManifest& manifest, const TrainConfig& cfg,
                         ModelBundle stage1, std::uint64_t seed);

// Both stages on one manifest.
ModelBundle train_model(const DatasetManifest& manifest, const ModelConfig& config,
                        const TrainConfig& cfg, std::uint64_t seed);

}  // namespace hdriqa
