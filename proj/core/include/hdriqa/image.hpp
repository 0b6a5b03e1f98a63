// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

namespace hdriqa {

// Linear radiance image in cd/m^2. Pixels are stored row-major, top row first,
// channels interleaved.
struct HdrImage {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> data;

  HdrImage() = default;
  HdrImage(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

  double& at(int row, int col, int ch = 0) {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  double at(int row, int col, int ch = 0) const {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }

  // Throws ValidationError unless dims are positive, channels is 1 or 3,
  // the buffer length matches, and every value is finite and non-negative.
  void validate() const;
};

// Real-valued single-channel 2-D array. Used for luminance patches and
// derived feature maps, which may be negative (MSCN).
struct Plane {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Plane() = default;
  Plane(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  double& at(int row, int col) { return data[static_cast<std::size_t>(row) * width + col]; }
  double at(int row, int col) const { return data[static_cast<std::size_t>(row) * width + col]; }
  std::size_t size() const { return data.size(); }
};

// Single-channel image viewed as a plane; ValidationError for colour input.
Plane to_plane(const HdrImage& image);
HdrImage to_image(const Plane& plane);

}  // namespace hdriqa
