// SPDX-License-Identifier: Apache-2.0
#include "hdriqa/maps.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "hdriqa/error.hpp"
#include "hdriqa/io.hpp"

namespace hdriqa {

double QualityMap::mean() const {
  if (values.empty()) throw ValidationError("empty quality map");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double QualityMap::max() const {
  if (values.empty()) throw ValidationError("empty quality map");
  return *std::max_element(values.begin(), values.end());
}

void QualityMap::validate() const {
  if (grid_rows <= 0 || grid_cols <= 0 || patch_size <= 0 || stride <= 0) {
    throw ValidationError("quality map has a degenerate grid");
  }
  if (values.size() != static_cast<std::size_t>(grid_rows) * grid_cols) {
    throw ValidationError("quality map value count does not match its grid");
  }
  if (source_width > 0 && source_height > 0) {
    const int rows = (source_height - patch_size) / stride + 1;
    const int cols = (source_width - patch_size) / stride + 1;
    if (rows != grid_rows || cols != grid_cols) {
      throw ValidationError("quality map grid does not match its source dimensions");
    }
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("quality map contains a non-finite value");
  }
}

QualityMap empty_map(const PatchSet& set) {
  QualityMap m;
  m.grid_rows = set.grid_rows;
  m.grid_cols = set.grid_cols;
  m.patch_size = set.size;
  m.stride = set.stride;
  m.source_width = set.source_width;
  m.source_height = set.source_height;
  m.values.assign(set.count(), 0.0);
  return m;
}

QualityMap normalize_max_one(const QualityMap& map) {
  QualityMap out = map;
  out.normalization = MapNormalization::max_one;
  if (out.values.empty()) return out;
  const double mx = map.max();
  if (mx == 0.0) return out;
  if (!(mx > 0.0) || !std::isfinite(mx)) throw NumericError("cannot normalize a map whose maximum is not positive");
  for (double& v : out.values) v /= mx;
  // Division by the max is exact for the max itself; pin it anyway.
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    if (map.values[i] == mx) out.values[i] = 1.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Heatmaps

std::array<std::uint8_t, 3> heat_color(double v) {
  if (!std::isfinite(v)) v = 0.0;
  v = std::clamp(v, 0.0, 1.0);
  auto byte = [](double x) { return static_cast<std::uint8_t>(std::lround(255.0 * x)); };
  if (v <= 0.5) {
    const double t = v / 0.5;
    return {0, byte(t), byte(1.0 - t)};
  }
  const double t = (v - 0.5) / 0.5;
  return {byte(t), byte(1.0 - t), 0};
}

RgbImage heatmap_image(const QualityMap& map, int block) {
  map.validate();
  const QualityMap norm = normalize_max_one(map);
  if (block <= 0) block = map.patch_size;
  RgbImage img;
  img.width = map.grid_cols * block;
  img.height = map.grid_rows * block;
  img.data.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const auto c = heat_color(norm.at(y / block, x / block));
      std::copy(c.begin(), c.end(), img.data.begin() + (static_cast<std::size_t>(y) * img.width + x) * 3);
    }
  }
  return img;
}

std::vector<std::uint8_t> encode_ppm(const RgbImage& image) {
  const std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.data.begin(), image.data.end());
  return out;
}

void render_heatmap(const QualityMap& map, const std::filesystem::path& out, int block) {
  const auto bytes = encode_ppm(heatmap_image(map, block));
  write_file_atomic(out, std::string(bytes.begin(), bytes.end()));
}

// ---------------------------------------------------------------------------
// Grating

double grating_phase(const GratingSpec& spec, int x) {
  const double w = std::max(1, spec.width - 1);
  const double xd = x;
  return 0.25 + spec.f_start * xd + 0.5 * (spec.f_end - spec.f_start) * xd * xd / w;
}

double grating_amplitude(const GratingSpec& spec, int y) {
  if (spec.height == 1) return 1.0;
  const double t = static_cast<double>(y) / (spec.height - 1);
  return 1.0 - (1.0 - spec.a_min) * t;
}

double grating_value(const GratingSpec& spec, int x, int y) {
  const double s = std::sin(2.0 * std::numbers::pi * grating_phase(spec, x));
  return spec.peak * 0.5 * (1.0 + s) * grating_amplitude(spec, y);
}

HdrImage make_grating(const GratingSpec& spec) {
  if (spec.width <= 0 || spec.height <= 0) throw ValidationError("grating dimensions must be positive");
  if (!(spec.peak > 0.0) || !std::isfinite(spec.peak)) throw ValidationError("grating peak must be positive");
  if (!(spec.a_min >= 0.0 && spec.a_min <= 1.0)) throw ValidationError("grating a_min must lie in [0, 1]");
  HdrImage img(spec.width, spec.height, 1);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      img.data[static_cast<std::size_t>(y) * spec.width + x] = std::max(0.0, grating_value(spec, x, y));
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Probe

QualityMap probe_resistance(const ModelBundle& bundle, const HdrImage& image, int stride) {
  if (stride <= 0) stride = bundle.config.patch_size;
  const PuCurve curve = bundle.config.domain == InputDomain::pu ? default_pu_curve() : PuCurve{};
  const PreparedImage prepared = prepare_image(image, bundle.config, curve, stride);
  PNet pnet(bundle.config);
  QualityMap map = empty_map(prepared.linear);
  constexpr std::size_t kBatch = 64;
  for (std::size_t start = 0; start < prepared.features.size(); start += kBatch) {
    const std::size_t end = std::min(prepared.features.size(), start + kBatch);
    std::vector<const FeatureStack*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&prepared.features[i]);
    const nn::Tensor t = pnet.forward(bundle.pnet, make_pnet_batch(batch));
    for (std::size_t i = start; i < end; ++i) map.values[i] = t[i - start];
  }
  return map;
}

}  // namespace hdriqa
