// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hdriqa/image.hpp"

namespace hdriqa {

// Portable float map. Both "PF" (RGB) and "Pf" (gray) are accepted, either
// endianness. Scanlines are flipped to top-down on read and back on write.
HdrImage read_pfm(const std::filesystem::path& path);
// Always written little-endian (scale -1.0).
void write_pfm(const HdrImage& image, const std::filesystem::path& path);

// Radiance RGBE (.hdr). Flat and new-style RLE scanlines are read; old-style
// RLE is rejected. Only the "-Y h +X w" orientation is supported.
HdrImage read_rgbe(const std::filesystem::path& path);
// Written with new-style RLE when the width allows it, flat otherwise.
void write_rgbe(const HdrImage& image, const std::filesystem::path& path);

// Encode/decode of one pixel; decode is mantissa * 2^(exponent - 136).
struct Rgbe {
  unsigned char r = 0, g = 0, b = 0, e = 0;
};
Rgbe encode_rgbe(double r, double g, double b);
void decode_rgbe(const Rgbe& px, double& r, double& g, double& b);

// Dispatches on extension: .pfm, or .hdr/.pic/.rgbe for Radiance.
HdrImage read_image(const std::filesystem::path& path);

// Rec.709 luminance. Single-channel input is returned unchanged.
HdrImage luminance(const HdrImage& image);

struct ManifestEntry {
  std::filesystem::path reference;
  std::filesystem::path distorted;
  double dmos = 0.0;
  std::string content_id;
};

struct DatasetManifest {
  double dmos_lo = 0.0;
  double dmos_hi = 100.0;
  std::vector<ManifestEntry> entries;

  // Distinct content ids in first-appearance order.
  std::vector<std::string> content_ids() const;
  // Sub-manifest with every entry whose content id is listed, order kept.
  DatasetManifest select_contents(const std::vector<std::string>& ids) const;
};

// Parses and validates a JSON manifest; entry paths are resolved against the
// manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path);
// Paths are written relative to the manifest's directory when possible.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
// Structural checks shared by load_manifest and in-memory construction.
// When check_files is set, every referenced file must exist.
void validate_manifest(const DatasetManifest& manifest, bool check_files);

// Concatenation of several manifests; the range becomes the union.
DatasetManifest merge_manifests(const std::vector<DatasetManifest>& manifests);

// Writes via a temporary sibling and renames, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace hdriqa
