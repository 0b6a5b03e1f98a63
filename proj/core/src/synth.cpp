// SPDX-License-Identifier: Apache-2.0
#include "hdriqa/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hdriqa/error.hpp"
#include "hdriqa/rng.hpp"

namespace hdriqa {

namespace fs = std::filesystem;

double oracle_resistance(double mean, double local_sigma, const OracleParams& p) {
  const double lum_term = mean <= p.knee ? 1.0 : std::pow(p.knee / mean, p.beta);
  return p.t0 * (1.0 + local_sigma / p.sigma_ref) * lum_term;
}

double oracle_resistance(const Plane& ref_patch, const OracleParams& p) {
  const Plane var = variance_map(ref_patch, p.window);
  double mean = 0.0, v = 0.0;
  for (std::size_t i = 0; i < ref_patch.data.size(); ++i) {
    mean += ref_patch.data[i];
    v += var.data[i];
  }
  const double n = static_cast<double>(ref_patch.data.size());
  return oracle_resistance(mean / n, std::sqrt(v / n), p);
}

QualityMap oracle_resistance_map(const HdrImage& reference, const OracleParams& p, int stride) {
  if (stride <= 0) stride = p.patch_size;
  const PatchSet set = extract_patches(to_plane(luminance(reference)), p.patch_size, stride);
  QualityMap map = empty_map(set);
  for (std::size_t i = 0; i < set.count(); ++i) map.values[i] = oracle_resistance(set.patches[i], p);
  return map;
}

double oracle_dmos(const HdrImage& reference, const HdrImage& distorted, const OracleParams& p) {
  const PatchSet ref = extract_patches(to_plane(luminance(reference)), p.patch_size, p.patch_size);
  const PatchSet dist = extract_patches(to_plane(luminance(distorted)), p.patch_size, p.patch_size);
  const std::vector<double> delta = patch_delta(ref, dist);
  double sum = 0.0;
  for (std::size_t i = 0; i < delta.size(); ++i) {
    sum += std::tanh(p.k_star * delta[i] / oracle_resistance(ref.patches[i], p));
  }
  return 100.0 * sum / static_cast<double>(delta.size());
}

std::string to_string(Distortion d) { return d == Distortion::quantize ? "quantize" : "blur"; }

double severity(const SynthConfig& cfg, Distortion d, int level) {
  const auto& table = d == Distortion::quantize ? cfg.quant_steps : cfg.blur_sigmas;
  if (level <= 0) return 0.0;
  if (table.empty()) throw ValidationError("empty severity table");
  const std::size_t i = static_cast<std::size_t>(level - 1);
  if (i < table.size()) return table[i];
  const double ratio = table.size() > 1 ? table.back() / table[table.size() - 2] : 2.0;
  return table.back() * std::pow(ratio, static_cast<double>(i - table.size() + 1));
}

namespace {

// Rounds to float so the in-memory image equals what a PFM round trip yields.
void as_stored(HdrImage& img) {
  for (double& v : img.data) v = static_cast<double>(static_cast<float>(v));
}

int reflect(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

std::vector<double> blur_plane(const std::vector<double>& src, int w, int h, double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  std::vector<double> tmp(src.size()), out(src.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * src[static_cast<std::size_t>(y) * w + reflect(x + i, w)];
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[static_cast<std::size_t>(reflect(y + i, h)) * w + x];
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  return out;
}

// Zero-mean, unit-variance Gaussian noise low-passed at the given scale.
std::vector<double> smooth_noise(int w, int h, double sigma, Rng& rng) {
  std::vector<double> n(static_cast<std::size_t>(w) * h);
  for (double& v : n) v = normal01(rng);
  n = blur_plane(n, w, h, sigma);
  double mean = 0.0, sq = 0.0;
  for (double v : n) mean += v;
  mean /= static_cast<double>(n.size());
  for (double& v : n) {
    v -= mean;
    sq += v * v;
  }
  const double sd = std::sqrt(sq / static_cast<double>(n.size()));
  for (double& v : n) v = sd > 0.0 ? v / sd : 0.0;
  return n;
}

}  // namespace

HdrImage synth_reference(const SynthConfig& cfg, int content) {
  if (cfg.size < cfg.oracle.patch_size) throw ValidationError("synthetic image smaller than one patch");
  if (!(cfg.peak > 0.0)) throw ValidationError("synthetic peak must be positive");
  const int s = cfg.size;
  Rng rng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(content)));

  const double log_base = uniform(rng, 1.5, 3.0);
  const double log_span = uniform(rng, 1.0, 2.5);
  const double ramp_dir = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double chirp_dir = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double f0 = uniform(rng, 1.0 / 128.0, 1.0 / 48.0);
  const double f1 = uniform(rng, 1.0 / 24.0, 1.0 / 12.0);
  const double depth = uniform(rng, 0.5, 0.9);
  const double phase0 = uniform01(rng);
  const double noise_gain = uniform(rng, 0.2, 0.9);

  // Slow field in [0.5, 1] modulating texture strength.
  std::vector<double> mask = smooth_noise(s, s, s / 8.0, rng);
  for (double& v : mask) v = 0.75 + 0.25 * std::tanh(v);
  // Equal energy per octave from 0.5 to 8 px, so blur leaves a readable trace
  // of what it removed.
  std::vector<double> noise(static_cast<std::size_t>(s) * s, 0.0);
  for (double scale : {0.5, 1.0, 2.0, 4.0, 8.0}) {
    const std::vector<double> band = smooth_noise(s, s, scale, rng);
    for (std::size_t i = 0; i < noise.size(); ++i) noise[i] += band[i] / std::sqrt(5.0);
  }

  const double diag = s * std::numbers::sqrt2;
  HdrImage img(s, s, 1);
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * s + x;
      const double u = static_cast<double>(x) / s, v = static_cast<double>(y) / s;
      const double ramp = std::cos(ramp_dir) * (u - 0.5) + std::sin(ramp_dir) * (v - 0.5);
      const double base = std::pow(10.0, log_base + log_span * ramp);
      const double pos = std::abs(std::cos(chirp_dir) * x + std::sin(chirp_dir) * y);
      const double phase = f0 * pos + 0.5 * (f1 - f0) * pos * pos / diag + phase0;
      const double grating = 1.0 + depth * mask[i] * std::sin(2.0 * std::numbers::pi * phase);
      const double tex = std::exp(noise_gain * mask[i] * noise[i]);
      img.data[i] = base * grating * tex;
    }
  }
  // The top half percent clips at the peak, so texture tails don't set the
  // exposure of the whole image.
  std::vector<double> sorted = img.data;
  const auto q = sorted.begin() + static_cast<std::ptrdiff_t>(0.995 * static_cast<double>(sorted.size() - 1));
  std::nth_element(sorted.begin(), q, sorted.end());
  const double scale = cfg.peak / *q;
  for (double& v : img.data) v = std::min(cfg.peak, v * scale);
  as_stored(img);
  return img;
}

HdrImage quantize(const HdrImage& image, double step) {
  if (!(step > 0.0)) return image;
  HdrImage out = image;
  for (double& v : out.data) v = step * std::round(v / step);
  as_stored(out);
  return out;
}

HdrImage gaussian_blur(const HdrImage& image, double sigma) {
  if (!(sigma > 0.0)) return image;
  if (image.channels != 1) throw ValidationError("gaussian_blur expects a single-channel image");
  HdrImage out = image;
  out.data = blur_plane(image.data, image.width, image.height, sigma);
  for (double& v : out.data) v = std::max(0.0, v);
  as_stored(out);
  return out;
}

HdrImage apply_distortion(const HdrImage& reference, Distortion d, int level, const SynthConfig& cfg) {
  if (level <= 0) return reference;
  const double sev = severity(cfg, d, level);
  return d == Distortion::quantize ? quantize(reference, sev) : gaussian_blur(reference, sev);
}

DatasetManifest synth_dataset(const fs::path& out_dir, const SynthConfig& cfg) {
  if (cfg.n_contents < 1 || cfg.levels < 1) throw ValidationError("synth needs at least one content and level");
  std::error_code ec;
  fs::create_directories(out_dir / "refs", ec);
  fs::create_directories(out_dir / "dist", ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  DatasetManifest m;
  m.dmos_lo = 0.0;
  m.dmos_hi = 100.0;
  for (int c = 0; c < cfg.n_contents; ++c) {
    const std::string id = "c" + std::to_string(c);
    const HdrImage ref = synth_reference(cfg, c);
    const fs::path ref_path = out_dir / "refs" / (id + ".pfm");
    write_pfm(ref, ref_path);
    for (Distortion d : {Distortion::quantize, Distortion::blur}) {
      for (int l = 1; l <= cfg.levels; ++l) {
        const HdrImage dist = apply_distortion(ref, d, l, cfg);
        const fs::path dist_path = out_dir / "dist" / (id + "_" + to_string(d) + "_" + std::to_string(l) + ".pfm");
        write_pfm(dist, dist_path);
        m.entries.push_back({ref_path, dist_path, oracle_dmos(ref, dist, cfg.oracle), id});
      }
    }
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace hdriqa
