// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "hdriqa/preprocess.hpp"

namespace hdriqa {

enum class MapNormalization { none, max_one };

// One scalar per patch on the extraction grid, row-major.
struct QualityMap {
  int grid_rows = 0;
  int grid_cols = 0;
  int patch_size = 32;
  int stride = 32;
  int source_width = 0;
  int source_height = 0;
  MapNormalization normalization = MapNormalization::none;
  std::vector<double> values;

  double at(int row, int col) const { return values[static_cast<std::size_t>(row) * grid_cols + col]; }
  double mean() const;
  double max() const;
  // Grid dims agree with source dims, patch size and stride; values finite.
  void validate() const;
};

// Zero-valued map on the grid of `set`.
QualityMap empty_map(const PatchSet& set);

// Divides by the maximum so it becomes exactly one. All-zero maps are
// returned unchanged. Idempotent.
QualityMap normalize_max_one(const QualityMap& map);

}  // namespace hdriqa
