// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "hdriqa/image.hpp"

namespace hdriqa {

// ---------------------------------------------------------------------------
// Perceptually uniform encoding

// Monotone knot table in (log10 luminance, PU value) space.
struct PuCurve {
  std::vector<std::pair<double, double>> knots;

  // Strictly increasing in both coordinates, at least two knots.
  void validate() const;
  // Piecewise-linear in log10 space; clamped to the end knots outside coverage.
  double encode(double luminance) const;
};

// Two-column text file, "log10_luminance pu_value" per line. '#' starts a comment.
PuCurve load_pu_curve(const std::filesystem::path& path);
// Built-in table, compiled from data/pu_default.txt.
PuCurve default_pu_curve();
// Where that file is installed.
std::filesystem::path default_pu_curve_path();

HdrImage pu_encode(const HdrImage& lum, const PuCurve& curve);

// ---------------------------------------------------------------------------
// Tone mapping (single-channel luminance unless noted)

// Adaptive logarithmic mapping; output in [0, ld_max * 0.01].
HdrImage tmo_drago(const HdrImage& lum, double bias = 0.85, double ld_max = 100.0);

// Global photographic operator: L_s = key * L / L_logavg, out = L_s / (1 + L_s).
HdrImage tmo_reinhard02(const HdrImage& lum, double key = 0.18);
// Log-average luminance used above; ValidationError for an all-zero image.
double log_average_luminance(const HdrImage& lum);

struct Reinhard05Params {
  double intensity = 0.0;   // f, brightness in [-8, 8]
  double contrast = -1.0;   // m in (0, 1); negative selects the automatic value
  double chromatic = 1.0;   // c, 0 = adapt to luminance, 1 = per channel
  double light = 0.0;       // a, 0 = global adaptation, 1 = per pixel
};

// Photoreceptor model V = I / (I + sigma), sigma = (exp(-f) * I_a)^m.
// Accepts luminance or RGB; output in [0, 1).
HdrImage tmo_reinhard05(const HdrImage& image, const Reinhard05Params& params = {});
// Adaptation term for one pixel (row, col, channel) under the given parameters.
double reinhard05_sigma(const HdrImage& image, const Reinhard05Params& params, int row, int col,
                        int ch);

// ---------------------------------------------------------------------------
// Local statistics

struct GaussianWindow {
  int size = 7;
  double sigma = 7.0 / 6.0;
};

// Normalized separable Gaussian weights (length == window.size).
std::vector<double> gaussian_weights(const GaussianWindow& window);

// Gaussian-weighted local mean with symmetric (edge-repeating) reflection.
Plane local_mean(const Plane& img, const GaussianWindow& window = {});

// sigma^2 = E_w[I^2] - E_w[I]^2, clamped at zero.
Plane variance_map(const Plane& img, const GaussianWindow& window = {});

// (I - mu) / (sigma + c); zero where sigma == 0.
Plane mscn_map(const Plane& img, double c, const GaussianWindow& window = {});

// ---------------------------------------------------------------------------
// Patches

struct PatchCoord {
  int row = 0;
  int col = 0;
  bool operator==(const PatchCoord&) const = default;
};

struct PatchSet {
  int size = 32;
  int stride = 32;
  int source_width = 0;
  int source_height = 0;
  int grid_rows = 0;
  int grid_cols = 0;
  std::vector<Plane> patches;
  std::vector<PatchCoord> coords;

  std::size_t count() const { return patches.size(); }
};

// Row-major grid of fully contained patches; partial patches are dropped.
PatchSet extract_patches(const Plane& img, int size = 32, int stride = 32);

// Mean absolute luminance difference per patch.
std::vector<double> patch_delta(const PatchSet& ref, const PatchSet& dist);
double mean_abs_difference(const Plane& a, const Plane& b);

// The three raw input channels of the resistance network.
struct FeatureStack {
  Plane lum;
  Plane var;
  Plane mscn;
};

constexpr double kFeatureMscnC = 0.01;

FeatureStack feature_stack(const Plane& patch, const GaussianWindow& window = {});

// ---------------------------------------------------------------------------
// Input domain selection for the networks

enum class InputDomain { linear, pu, drago, reinhard02, reinhard05 };

std::string to_string(InputDomain domain);
InputDomain parse_input_domain(const std::string& name);

// Maps linear luminance into the selected domain (identity for linear).
HdrImage apply_input_domain(const HdrImage& lum, InputDomain domain, const PuCurve& curve);
// Nominal maximum of the domain, used to normalize network input.
double input_domain_peak(InputDomain domain, double l_peak, const PuCurve& curve);

}  // namespace hdriqa
