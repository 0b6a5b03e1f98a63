// SPDX-License-Identifier: Apache-2.0
#include "hdriqa/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "hdriqa/error.hpp"

namespace hdriqa {

namespace fs = std::filesystem;

void HdrImage::validate() const {
  if (width <= 0 || height <= 0) {
    throw ValidationError("image has non-positive dimensions " + std::to_string(width) + "x" +
                          std::to_string(height));
  }
  if (channels != 1 && channels != 3) {
    throw ValidationError("image must have 1 or 3 channels, got " + std::to_string(channels));
  }
  if (data.size() != static_cast<std::size_t>(width) * height * channels) {
    throw ValidationError("image buffer length does not match its dimensions");
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i]) || data[i] < 0.0) {
      throw ValidationError("image value at index " + std::to_string(i) +
                            " is negative or non-finite");
    }
  }
}

Plane to_plane(const HdrImage& image) {
  if (image.channels != 1) throw ValidationError("expected a single-channel image");
  Plane p;
  p.width = image.width;
  p.height = image.height;
  p.data = image.data;
  return p;
}

HdrImage to_image(const Plane& plane) {
  HdrImage img;
  img.width = plane.width;
  img.height = plane.height;
  img.channels = 1;
  img.data = plane.data;
  return img;
}

namespace {

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

bool is_space(char c) { return c == ' ' || c == '\n' || c == '\r' || c == '\t'; }

// Reads one whitespace-delimited token starting at pos; pos ends on the
// delimiter that follows it.
std::string next_token(const std::string& buf, std::size_t& pos, const fs::path& path) {
  while (pos < buf.size() && is_space(buf[pos])) ++pos;
  const std::size_t start = pos;
  while (pos < buf.size() && !is_space(buf[pos])) ++pos;
  if (start == pos) {
    throw FormatError(path.string() + ": truncated PFM header at byte " + std::to_string(start));
  }
  return buf.substr(start, pos - start);
}

long parse_long(const std::string& tok, const fs::path& path, const char* what) {
  long v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || p != tok.data() + tok.size()) {
    throw FormatError(path.string() + ": bad PFM " + what + " '" + tok + "'");
  }
  return v;
}

}  // namespace

HdrImage read_pfm(const fs::path& path) {
  const std::string buf = read_all(path);
  std::size_t pos = 0;
  const std::string magic = next_token(buf, pos, path);
  int channels = 0;
  if (magic == "PF") {
    channels = 3;
  } else if (magic == "Pf") {
    channels = 1;
  } else {
    throw FormatError(path.string() + ": not a PFM file (magic '" + magic + "')");
  }
  const long w = parse_long(next_token(buf, pos, path), path, "width");
  const long h = parse_long(next_token(buf, pos, path), path, "height");
  if (w <= 0 || h <= 0 || w > (1 << 20) || h > (1 << 20)) {
    throw FormatError(path.string() + ": invalid PFM dimensions " + std::to_string(w) + "x" +
                      std::to_string(h));
  }
  const std::string scale_tok = next_token(buf, pos, path);
  double scale = 0.0;
  try {
    std::size_t used = 0;
    scale = std::stod(scale_tok, &used);
    if (used != scale_tok.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": bad PFM scale '" + scale_tok + "'");
  }
  if (scale == 0.0 || !std::isfinite(scale)) {
    throw FormatError(path.string() + ": PFM scale must be finite and non-zero");
  }
  // Exactly one whitespace byte separates the header from the payload.
  if (pos >= buf.size()) throw FormatError(path.string() + ": missing PFM payload");
  ++pos;
  const bool little = scale < 0.0;

  const std::size_t count = static_cast<std::size_t>(w) * h * channels;
  if (buf.size() - pos < count * 4) {
    throw FormatError(path.string() + ": truncated PFM payload, expected " +
                      std::to_string(count * 4) + " bytes at offset " + std::to_string(pos) +
                      ", found " + std::to_string(buf.size() - pos));
  }

  HdrImage img(static_cast<int>(w), static_cast<int>(h), channels);
  const std::size_t row_len = static_cast<std::size_t>(w) * channels;
  for (long file_row = 0; file_row < h; ++file_row) {
    const long mem_row = h - 1 - file_row;
    for (std::size_t i = 0; i < row_len; ++i) {
      const std::size_t off = pos + (file_row * row_len + i) * 4;
      std::uint32_t bits;
      std::memcpy(&bits, buf.data() + off, 4);
      if (little != (std::endian::native == std::endian::little)) bits = __builtin_bswap32(bits);
      const float f = std::bit_cast<float>(bits);
      if (!std::isfinite(f) || f < 0.0f) {
        throw FormatError(path.string() + ": invalid pixel value at byte offset " +
                          std::to_string(off));
      }
      img.data[mem_row * row_len + i] = f;
    }
  }
  return img;
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

void write_pfm(const HdrImage& image, const fs::path& path) {
  if (image.width <= 0 || image.height <= 0) {
    throw FormatError("cannot write an empty image as PFM");
  }
  image.validate();
  std::string out = (image.channels == 3 ? "PF\n" : "Pf\n") + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n-1.0\n";
  const std::size_t header = out.size();
  const std::size_t row_len = static_cast<std::size_t>(image.width) * image.channels;
  out.resize(header + row_len * image.height * 4);
  for (int file_row = 0; file_row < image.height; ++file_row) {
    const int mem_row = image.height - 1 - file_row;
    for (std::size_t i = 0; i < row_len; ++i) {
      std::uint32_t bits =
          std::bit_cast<std::uint32_t>(static_cast<float>(image.data[mem_row * row_len + i]));
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      std::memcpy(out.data() + header + (file_row * row_len + i) * 4, &bits, 4);
    }
  }
  write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// RGBE

Rgbe encode_rgbe(double r, double g, double b) {
  const double v = std::max({r, g, b});
  Rgbe px;
  if (!(v > 1e-32)) return px;
  int e = 0;
  std::frexp(v, &e);  // v = m * 2^e, m in [0.5, 1)
  auto quant = [&](double x, int exp) {
    return std::ldexp(x, 8 - exp);  // x * 256 / 2^exp
  };
  // Rounding can push the largest mantissa to 256; move to the next exponent.
  if (std::floor(quant(v, e) + 0.5) >= 256.0) ++e;
  if (e + 128 > 255) {
    px.r = px.g = px.b = px.e = 255;
    return px;
  }
  if (e + 128 < 1) return px;
  auto m = [&](double x) {
    const double q = std::floor(quant(std::max(x, 0.0), e) + 0.5);
    return static_cast<unsigned char>(std::min(q, 255.0));
  };
  px.r = m(r);
  px.g = m(g);
  px.b = m(b);
  px.e = static_cast<unsigned char>(e + 128);
  return px;
}

void decode_rgbe(const Rgbe& px, double& r, double& g, double& b) {
  if (px.e == 0) {
    r = g = b = 0.0;
    return;
  }
  const double f = std::ldexp(1.0, static_cast<int>(px.e) - (128 + 8));
  r = px.r * f;
  g = px.g * f;
  b = px.b * f;
}

HdrImage read_rgbe(const fs::path& path) {
  const std::string buf = read_all(path);
  std::size_t pos = 0;
  auto read_line = [&]() -> std::string {
    const std::size_t nl = buf.find('\n', pos);
    if (nl == std::string::npos) {
      throw FormatError(path.string() + ": truncated RGBE header at byte " + std::to_string(pos));
    }
    std::string line = buf.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };

  const std::string first = read_line();
  if (first.rfind("#?", 0) != 0) {
    throw FormatError(path.string() + ": missing '#?RADIANCE' signature");
  }
  for (;;) {
    const std::string line = read_line();
    if (line.empty()) break;
    if (line.rfind("FORMAT=", 0) == 0 && line != "FORMAT=32-bit_rle_rgbe") {
      throw FormatError(path.string() + ": unsupported header variant '" + line + "'");
    }
  }
  const std::string res = read_line();
  int h = 0, w = 0;
  {
    std::istringstream rs(res);
    std::string ya, xa;
    if (!(rs >> ya >> h >> xa >> w) || ya != "-Y" || xa != "+X") {
      throw FormatError(path.string() + ": unsupported resolution line '" + res + "'");
    }
    if (w <= 0 || h <= 0) throw FormatError(path.string() + ": invalid RGBE dimensions");
  }

  HdrImage img(w, h, 3);
  std::vector<unsigned char> scan(static_cast<std::size_t>(w) * 4);
  auto need = [&](std::size_t n) {
    if (buf.size() - pos < n) {
      throw FormatError(path.string() + ": truncated RGBE scanline data at byte " +
                        std::to_string(pos));
    }
  };
  auto byte = [&](std::size_t i) { return static_cast<unsigned char>(buf[i]); };

  for (int y = 0; y < h; ++y) {
    need(4);
    const bool new_rle = w >= 8 && w < 0x8000 && byte(pos) == 2 && byte(pos + 1) == 2 &&
                         (byte(pos + 2) & 0x80) == 0;
    if (new_rle) {
      const int len = (byte(pos + 2) << 8) | byte(pos + 3);
      if (len != w) {
        throw FormatError(path.string() + ": scanline length mismatch at row " +
                          std::to_string(y) + " (" + std::to_string(len) + " vs " +
                          std::to_string(w) + ")");
      }
      pos += 4;
      for (int c = 0; c < 4; ++c) {
        int x = 0;
        while (x < w) {
          need(1);
          int count = byte(pos++);
          if (count > 128) {
            count -= 128;
            if (count > w - x) {
              throw FormatError(path.string() + ": RLE run overflows scanline at row " +
                                std::to_string(y));
            }
            need(1);
            const unsigned char v = byte(pos++);
            for (int k = 0; k < count; ++k) scan[(x++) * 4 + c] = v;
          } else {
            if (count == 0 || count > w - x) {
              throw FormatError(path.string() + ": bad RLE literal at row " + std::to_string(y));
            }
            need(static_cast<std::size_t>(count));
            for (int k = 0; k < count; ++k) scan[(x++) * 4 + c] = byte(pos++);
          }
        }
      }
    } else {
      need(static_cast<std::size_t>(w) * 4);
      for (int x = 0; x < w; ++x) {
        const std::size_t o = pos + static_cast<std::size_t>(x) * 4;
        if (byte(o) == 1 && byte(o + 1) == 1 && byte(o + 2) == 1) {
          throw FormatError(path.string() + ": old-style RLE scanlines are not supported (row " +
                            std::to_string(y) + ")");
        }
        for (int c = 0; c < 4; ++c) scan[x * 4 + c] = byte(o + c);
      }
      pos += static_cast<std::size_t>(w) * 4;
    }
    for (int x = 0; x < w; ++x) {
      const Rgbe px{scan[x * 4], scan[x * 4 + 1], scan[x * 4 + 2], scan[x * 4 + 3]};
      decode_rgbe(px, img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2));
    }
  }
  return img;
}

namespace {

void rle_channel(std::string& out, const std::vector<unsigned char>& data) {
  const std::size_t n = data.size();
  std::size_t cur = 0;
  constexpr std::size_t kMinRun = 4;
  while (cur < n) {
    std::size_t beg_run = cur;
    std::size_t run_count = 0;
    std::size_t old_run_count = 0;
    while (run_count < kMinRun && beg_run < n) {
      beg_run += run_count;
      old_run_count = run_count;
      run_count = 1;
      while (beg_run + run_count < n && run_count < 127 &&
             data[beg_run] == data[beg_run + run_count]) {
        ++run_count;
      }
    }
    // A short run directly before a long one is cheaper as a run too.
    if (old_run_count > 1 && old_run_count == beg_run - cur) {
      out.push_back(static_cast<char>(128 + old_run_count));
      out.push_back(static_cast<char>(data[cur]));
      cur = beg_run;
    }
    while (cur < beg_run) {
      const std::size_t nonrun = std::min<std::size_t>(128, beg_run - cur);
      out.push_back(static_cast<char>(nonrun));
      for (std::size_t k = 0; k < nonrun; ++k) out.push_back(static_cast<char>(data[cur + k]));
      cur += nonrun;
    }
    if (run_count >= kMinRun) {
      out.push_back(static_cast<char>(128 + run_count));
      out.push_back(static_cast<char>(data[beg_run]));
      cur += run_count;
    }
  }
}

}  // namespace

void write_rgbe(const HdrImage& image, const fs::path& path) {
  image.validate();
  std::string out = "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y " + std::to_string(image.height) +
                    " +X " + std::to_string(image.width) + "\n";
  const int w = image.width;
  const bool rle = w >= 8 && w < 0x8000;
  std::vector<std::vector<unsigned char>> planes(4, std::vector<unsigned char>(w));
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < w; ++x) {
      double r, g, b;
      if (image.channels == 3) {
        r = image.at(y, x, 0);
        g = image.at(y, x, 1);
        b = image.at(y, x, 2);
      } else {
        r = g = b = image.at(y, x);
      }
      const Rgbe px = encode_rgbe(r, g, b);
      planes[0][x] = px.r;
      planes[1][x] = px.g;
      planes[2][x] = px.b;
      planes[3][x] = px.e;
    }
    if (rle) {
      out.push_back(2);
      out.push_back(2);
      out.push_back(static_cast<char>(w >> 8));
      out.push_back(static_cast<char>(w & 0xFF));
      for (const auto& p : planes) rle_channel(out, p);
    } else {
      for (int x = 0; x < w; ++x) {
        for (const auto& p : planes) out.push_back(static_cast<char>(p[x]));
      }
    }
  }
  write_file_atomic(path, out);
}

HdrImage read_image(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".pfm") return read_pfm(path);
  if (ext == ".hdr" || ext == ".pic" || ext == ".rgbe") return read_rgbe(path);
  throw FormatError(path.string() + ": unsupported image extension '" + ext + "'");
}

HdrImage luminance(const HdrImage& image) {
  if (image.channels == 1) return image;
  if (image.channels != 3) throw ValidationError("luminance expects 1 or 3 channels");
  HdrImage y(image.width, image.height, 1);
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    const double* px = &image.data[i * 3];
    y.data[i] = 0.2126 * px[0] + 0.7152 * px[1] + 0.0722 * px[2];
  }
  return y;
}

// ---------------------------------------------------------------------------
// Manifest

std::vector<std::string> DatasetManifest::content_ids() const {
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (seen.insert(e.content_id).second) ids.push_back(e.content_id);
  }
  return ids;
}

DatasetManifest DatasetManifest::select_contents(const std::vector<std::string>& ids) const {
  const std::set<std::string> keep(ids.begin(), ids.end());
  DatasetManifest out;
  out.dmos_lo = dmos_lo;
  out.dmos_hi = dmos_hi;
  for (const auto& e : entries) {
    if (keep.count(e.content_id)) out.entries.push_back(e);
  }
  return out;
}

void validate_manifest(const DatasetManifest& m, bool check_files) {
  if (!(m.dmos_lo < m.dmos_hi)) throw ValidationError("manifest dmos_range must satisfy lo < hi");
  if (m.entries.empty()) throw ValidationError("empty manifest");
  std::set<std::string> dists;
  std::unordered_map<std::string, std::string> content_of_ref;
  std::unordered_map<std::string, std::string> ref_of_content;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    const std::string where = "manifest entry " + std::to_string(i);
    if (e.content_id.empty()) throw ValidationError(where + ": empty content id");
    if (!std::isfinite(e.dmos) || e.dmos < m.dmos_lo || e.dmos > m.dmos_hi) {
      throw ValidationError(where + ": dmos " + std::to_string(e.dmos) + " outside [" +
                            std::to_string(m.dmos_lo) + ", " + std::to_string(m.dmos_hi) + "]");
    }
    if (!dists.insert(e.distorted.lexically_normal().string()).second) {
      throw ValidationError(where + ": duplicate distorted path " + e.distorted.string());
    }
    const std::string ref = e.reference.lexically_normal().string();
    auto [it, fresh] = content_of_ref.emplace(ref, e.content_id);
    if (!fresh && it->second != e.content_id) {
      throw ValidationError(where + ": reference " + ref + " is used by two content ids");
    }
    auto [jt, fresh2] = ref_of_content.emplace(e.content_id, ref);
    if (!fresh2 && jt->second != ref) {
      throw ValidationError(where + ": content id " + e.content_id + " has two references");
    }
    if (check_files) {
      if (!fs::exists(e.reference)) throw ValidationError(where + ": missing file " + ref);
      if (!fs::exists(e.distorted)) {
        throw ValidationError(where + ": missing file " + e.distorted.string());
      }
    }
  }
}

DatasetManifest load_manifest(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_all(path));
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(path.string() + ": invalid manifest JSON: " + ex.what());
  }
  const fs::path base = path.parent_path();
  DatasetManifest m;
  try {
    const auto& range = j.at("dmos_range");
    if (!range.is_array() || range.size() != 2) {
      throw ValidationError("dmos_range must be a two-element array");
    }
    m.dmos_lo = range[0].get<double>();
    m.dmos_hi = range[1].get<double>();
    for (const auto& e : j.at("entries")) {
      ManifestEntry entry;
      entry.reference = base / e.at("ref").get<std::string>();
      entry.distorted = base / e.at("dist").get<std::string>();
      entry.dmos = e.at("dmos").get<double>();
      entry.content_id = e.at("content").get<std::string>();
      m.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(path.string() + ": malformed manifest: " + ex.what());
  }
  validate_manifest(m, true);
  return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  validate_manifest(m, false);
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  auto rel = [&](const fs::path& p) {
    std::error_code ec;
    const fs::path r = fs::relative(p, base, ec);
    return (ec || r.empty()) ? p.string() : r.generic_string();
  };
  nlohmann::ordered_json j;
  j["dmos_range"] = {m.dmos_lo, m.dmos_hi};
  j["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : m.entries) {
    nlohmann::ordered_json je;
    je["ref"] = rel(e.reference);
    je["dist"] = rel(e.distorted);
    je["dmos"] = e.dmos;
    je["content"] = e.content_id;
    j["entries"].push_back(std::move(je));
  }
  write_file_atomic(path, j.dump(2) + "\n");
}

DatasetManifest merge_manifests(const std::vector<DatasetManifest>& manifests) {
  DatasetManifest out;
  if (manifests.empty()) return out;
  out.dmos_lo = manifests.front().dmos_lo;
  out.dmos_hi = manifests.front().dmos_hi;
  for (const auto& m : manifests) {
    out.dmos_lo = std::min(out.dmos_lo, m.dmos_lo);
    out.dmos_hi = std::max(out.dmos_hi, m.dmos_hi);
    out.entries.insert(out.entries.end(), m.entries.begin(), m.entries.end());
  }
  return out;
}

}  // namespace hdriqa
