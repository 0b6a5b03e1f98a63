// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "hdriqa/image.hpp"
#include "hdriqa/model.hpp"
#include "hdriqa/quality_map.hpp"

namespace hdriqa {

// Blue at 0, green at 0.5, red at 1, linear in between; input clamped to [0, 1].
std::array<std::uint8_t, 3> heat_color(double v);

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // row-major RGB
};

// Max-one normalizes, then paints each grid cell as a block of `block` pixels
// (patch_size when block <= 0).
RgbImage heatmap_image(const QualityMap& map, int block = 0);
// Binary PPM (P6).
void render_heatmap(const QualityMap& map, const std::filesystem::path& out, int block = 0);
std::vector<std::uint8_t> encode_ppm(const RgbImage& image);

struct GratingSpec {
  int width = 800;
  int height = 800;
  double peak = 4000.0;
  // Spatial frequency in cycles per pixel at the left and right edges.
  double f_start = 1.0 / 256.0;
  double f_end = 1.0 / 4.0;
  // Amplitude at the bottom row; the top row has amplitude 1.
  double a_min = 0.02;
};

// Chirp phase along x; phase(0) = 1/4 so the first column sits on a crest.
double grating_phase(const GratingSpec& spec, int x);
double grating_amplitude(const GratingSpec& spec, int y);
// peak * 0.5 * (1 + sin(2 pi phase(x))) * a(y)
double grating_value(const GratingSpec& spec, int x, int y);
HdrImage make_grating(const GratingSpec& spec = {});

// P-Net output per patch; neither E-Net nor the mixing layer is involved.
QualityMap probe_resistance(const ModelBundle& bundle, const HdrImage& image, int stride = 0);

}  // namespace hdriqa
