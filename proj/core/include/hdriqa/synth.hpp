// SPDX-License-Identifier: Apache-2.0
//
// Procedural HDR dataset with a known error-resistance field, so that the
// two-stage model can be checked against ground truth.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hdriqa/image.hpp"
#include "hdriqa/io.hpp"
#include "hdriqa/preprocess.hpp"
#include "hdriqa/quality_map.hpp"

namespace hdriqa {

// T*(mu, sigma) = t0 * (1 + sigma / sigma_ref) * (mu <= knee ? 1 : (knee / mu)^beta)
// with mu the mean and sigma the rms local deviation of the reference patch.
struct OracleParams {
  double t0 = 20.0;
  double sigma_ref = 50.0;
  double knee = 500.0;
  double beta = 0.5;
  double k_star = 2.0;
  int patch_size = 32;
  GaussianWindow window;
};

double oracle_resistance(double mean, double local_sigma, const OracleParams& p = {});
// T* for one reference patch.
double oracle_resistance(const Plane& ref_patch, const OracleParams& p = {});
QualityMap oracle_resistance_map(const HdrImage& reference, const OracleParams& p = {}, int stride = 0);
// 100 * mean_patches tanh(k* delta / T*).
double oracle_dmos(const HdrImage& reference, const HdrImage& distorted, const OracleParams& p = {});

enum class Distortion { quantize, blur };
std::string to_string(Distortion d);

struct SynthConfig {
  int n_contents = 8;
  int levels = 4;
  int size = 256;
  double peak = 4000.0;
  std::uint64_t seed = 0;
  // Per-level severities; level l (1-based) uses entry l-1, extrapolated geometrically past the end.
  std::vector<double> quant_steps{12.0, 30.0, 70.0, 150.0};
  std::vector<double> blur_sigmas{0.42, 0.55, 0.8, 1.2};
  OracleParams oracle;
};

double severity(const SynthConfig& cfg, Distortion d, int level);

// Procedural luminance reference whose maximum is exactly cfg.peak.
HdrImage synth_reference(const SynthConfig& cfg, int content);
// level 0 returns the reference unchanged.
HdrImage apply_distortion(const HdrImage& reference, Distortion d, int level, const SynthConfig& cfg);
HdrImage quantize(const HdrImage& image, double step);
HdrImage gaussian_blur(const HdrImage& image, double sigma);

// Writes refs/ and dist/ PFM files plus manifest.json under out_dir.
DatasetManifest synth_dataset(const std::filesystem::path& out_dir, const SynthConfig& cfg = {});

}  // namespace hdriqa
