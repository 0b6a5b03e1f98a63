// SPDX-License-Identifier: Apache-2.0
#include "hdriqa/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "hdriqa/error.hpp"
#include "hdriqa/io.hpp"

namespace hdriqa {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// PU

void PuCurve::validate() const {
  if (knots.size() < 2) throw ValidationError("PU curve needs at least two knots");
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (!(knots[i].first > knots[i - 1].first) || !(knots[i].second > knots[i - 1].second)) {
      throw ValidationError("PU curve knots must be strictly increasing (knot " +
                            std::to_string(i) + ")");
    }
  }
}

double PuCurve::encode(double luminance) const {
  if (!(luminance > 0.0)) return knots.front().second;
  const double x = std::log10(luminance);
  if (x <= knots.front().first) return knots.front().second;
  if (x >= knots.back().first) return knots.back().second;
  const auto it = std::upper_bound(knots.begin(), knots.end(), x,
                                   [](double v, const auto& k) { return v < k.first; });
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  if (x == lo.first) return lo.second;
  const double t = (x - lo.first) / (hi.first - lo.first);
  return lo.second + t * (hi.second - lo.second);
}

namespace {

#include "pu_default.inc"

PuCurve parse_pu_curve(std::istream& in, const std::string& name) {
  PuCurve curve;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    double l, v;
    if (!(ls >> l)) continue;
    if (!(ls >> v)) {
      throw FormatError(name + ":" + std::to_string(lineno) + ": expected two columns");
    }
    curve.knots.emplace_back(l, v);
  }
  curve.validate();
  return curve;
}

}  // namespace

PuCurve load_pu_curve(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open PU curve " + path.string());
  return parse_pu_curve(in, path.string());
}

fs::path default_pu_curve_path() {
  return fs::path(HDRIQA_DATA_DIR) / "pu_default.txt";
}

PuCurve default_pu_curve() {
  static const PuCurve curve = [] {
    std::istringstream in(kPuDefaultTable);
    return parse_pu_curve(in, "pu_default.txt");
  }();
  return curve;
}

HdrImage pu_encode(const HdrImage& lum, const PuCurve& curve) {
  curve.validate();
  if (lum.channels != 1) throw ValidationError("pu_encode expects single-channel luminance");
  HdrImage out = lum;
  for (double& v : out.data) v = curve.encode(v);
  return out;
}

// ---------------------------------------------------------------------------
// Tone mapping

namespace {

double max_value(const HdrImage& img) {
  double m = 0.0;
  for (double v : img.data) m = std::max(m, v);
  return m;
}

void require_lum(const HdrImage& img, const char* who) {
  if (img.channels != 1) throw ValidationError(std::string(who) + " expects single-channel input");
  if (img.data.empty()) throw ValidationError(std::string(who) + ": empty image");
}

}  // namespace

HdrImage tmo_drago(const HdrImage& lum, double bias, double ld_max) {
  require_lum(lum, "tmo_drago");
  const double lw_max = max_value(lum);
  if (!(lw_max > 0.0)) throw ValidationError("tmo_drago: all-zero image");
  const double exponent = std::log(bias) / std::log(0.5);
  const double scale = ld_max * 0.01 / std::log10(lw_max + 1.0);
  HdrImage out = lum;
  for (double& v : out.data) {
    const double lw = std::max(v, 0.0);
    v = scale * std::log(lw + 1.0) / std::log(2.0 + 8.0 * std::pow(lw / lw_max, exponent));
  }
  return out;
}

double log_average_luminance(const HdrImage& lum) {
  require_lum(lum, "log_average_luminance");
  if (!(max_value(lum) > 0.0)) throw ValidationError("log-average undefined for an all-zero image");
  constexpr double kDelta = 1e-6;
  double acc = 0.0;
  for (double v : lum.data) acc += std::log(kDelta + v);
  return std::exp(acc / static_cast<double>(lum.data.size()));
}

HdrImage tmo_reinhard02(const HdrImage& lum, double key) {
  const double l_avg = log_average_luminance(lum);
  HdrImage out = lum;
  for (double& v : out.data) {
    const double ls = key * v / l_avg;
    v = ls / (1.0 + ls);
  }
  return out;
}

namespace {

struct Reinhard05Stats {
  double lum_mean = 0.0;
  double chan_mean[3] = {0.0, 0.0, 0.0};
  double contrast = 0.3;
};

double pixel_lum(const HdrImage& img, std::size_t i) {
  if (img.channels == 1) return img.data[i];
  const double* p = &img.data[i * 3];
  return 0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2];
}

Reinhard05Stats reinhard05_stats(const HdrImage& img, const Reinhard05Params& params) {
  if (img.channels != 1 && img.channels != 3) {
    throw ValidationError("tmo_reinhard05 expects 1 or 3 channels");
  }
  const std::size_t n = img.pixel_count();
  if (n == 0) throw ValidationError("tmo_reinhard05: empty image");
  Reinhard05Stats s;
  constexpr double kDelta = 1e-6;
  double lmax = -std::numeric_limits<double>::infinity();
  double lmin = std::numeric_limits<double>::infinity();
  double log_sum = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < n; ++i) {
    const double l = pixel_lum(img, i);
    any = any || l > 0.0;
    s.lum_mean += l;
    for (int c = 0; c < img.channels; ++c) s.chan_mean[c] += img.data[i * img.channels + c];
    const double ll = std::log(l + kDelta);
    log_sum += ll;
    lmax = std::max(lmax, ll);
    lmin = std::min(lmin, ll);
  }
  if (!any) throw ValidationError("tmo_reinhard05: all-zero image");
  s.lum_mean /= static_cast<double>(n);
  for (double& c : s.chan_mean) c /= static_cast<double>(n);
  if (params.contrast > 0.0) {
    s.contrast = params.contrast;
  } else {
    const double lav = log_sum / static_cast<double>(n);
    const double k = lmax > lmin ? (lmax - lav) / (lmax - lmin) : 0.0;
    s.contrast = 0.3 + 0.7 * std::pow(k, 1.4);
  }
  return s;
}

double sigma_at(const HdrImage& img, const Reinhard05Params& p, const Reinhard05Stats& s,
                std::size_t i, int ch) {
  const double value = img.data[i * img.channels + ch];
  const double l = pixel_lum(img, i);
  const double local = p.chromatic * value + (1.0 - p.chromatic) * l;
  const double global =
      p.chromatic * s.chan_mean[img.channels == 1 ? 0 : ch] + (1.0 - p.chromatic) * s.lum_mean;
  const double adapt = p.light * local + (1.0 - p.light) * global;
  return std::pow(std::exp(-p.intensity) * adapt, s.contrast);
}

}  // namespace

double reinhard05_sigma(const HdrImage& image, const Reinhard05Params& params, int row, int col,
                        int ch) {
  const Reinhard05Stats s = reinhard05_stats(image, params);
  return sigma_at(image, params, s, static_cast<std::size_t>(row) * image.width + col, ch);
}

HdrImage tmo_reinhard05(const HdrImage& image, const Reinhard05Params& params) {
  const Reinhard05Stats s = reinhard05_stats(image, params);
  HdrImage out = image;
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    for (int c = 0; c < image.channels; ++c) {
      const double v = image.data[i * image.channels + c];
      const double sigma = sigma_at(image, params, s, i, c);
      const double denom = v + sigma;
      out.data[i * image.channels + c] = denom > 0.0 ? v / denom : 0.0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Local statistics

std::vector<double> gaussian_weights(const GaussianWindow& window) {
  if (window.size < 1 || window.size % 2 == 0) {
    throw ValidationError("Gaussian window size must be a positive odd number");
  }
  if (!(window.sigma > 0.0)) throw ValidationError("Gaussian window sigma must be positive");
  const int r = window.size / 2;
  std::vector<double> w(window.size);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    w[i + r] = std::exp(-0.5 * (i * i) / (window.sigma * window.sigma));
    sum += w[i + r];
  }
  for (double& x : w) x /= sum;
  return w;
}

namespace {

int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

Plane separable_filter(const Plane& img, const std::vector<double>& w) {
  const int r = static_cast<int>(w.size()) / 2;
  Plane tmp(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) acc += w[k + r] * img.at(y, reflect(x + k, img.width));
      tmp.at(y, x) = acc;
    }
  }
  Plane out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) acc += w[k + r] * tmp.at(reflect(y + k, img.height), x);
      out.at(y, x) = acc;
    }
  }
  return out;
}

void check_window(const Plane& img, const GaussianWindow& window) {
  if (img.width <= 0 || img.height <= 0) throw ValidationError("empty image");
  if (window.size > std::min(img.width, img.height)) {
    throw ValidationError("Gaussian window larger than the image");
  }
}

struct Moments {
  Plane mean;
  Plane var;
};

Moments local_moments(const Plane& img, const GaussianWindow& window) {
  check_window(img, window);
  const auto w = gaussian_weights(window);
  Moments m;
  m.mean = separable_filter(img, w);
  Plane sq = img;
  for (double& v : sq.data) v *= v;
  m.var = separable_filter(sq, w);
  for (std::size_t i = 0; i < m.var.size(); ++i) {
    m.var.data[i] = std::max(0.0, m.var.data[i] - m.mean.data[i] * m.mean.data[i]);
  }
  return m;
}

}  // namespace

Plane local_mean(const Plane& img, const GaussianWindow& window) {
  check_window(img, window);
  return separable_filter(img, gaussian_weights(window));
}

Plane variance_map(const Plane& img, const GaussianWindow& window) {
  return local_moments(img, window).var;
}

Plane mscn_map(const Plane& img, double c, const GaussianWindow& window) {
  if (!(c >= 0.0)) throw ValidationError("MSCN stabilizing constant must be >= 0");
  const Moments m = local_moments(img, window);
  Plane out(img.width, img.height);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double sigma = std::sqrt(m.var.data[i]);
    if (sigma == 0.0) {
      out.data[i] = 0.0;
    } else {
      out.data[i] = (img.data[i] - m.mean.data[i]) / (sigma + c);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patches

PatchSet extract_patches(const Plane& img, int size, int stride) {
  if (size <= 0) throw ValidationError("patch size must be positive");
  if (stride < 1) throw ValidationError("patch stride must be >= 1");
  if (img.width < size || img.height < size) {
    throw ValidationError("image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                          " is smaller than one " + std::to_string(size) + "px patch");
  }
  PatchSet set;
  set.size = size;
  set.stride = stride;
  set.source_width = img.width;
  set.source_height = img.height;
  set.grid_rows = (img.height - size) / stride + 1;
  set.grid_cols = (img.width - size) / stride + 1;
  set.patches.reserve(static_cast<std::size_t>(set.grid_rows) * set.grid_cols);
  for (int gr = 0; gr < set.grid_rows; ++gr) {
    for (int gc = 0; gc < set.grid_cols; ++gc) {
      const PatchCoord pc{gr * stride, gc * stride};
      Plane p(size, size);
      for (int y = 0; y < size; ++y) {
        const double* src = &img.data[static_cast<std::size_t>(pc.row + y) * img.width + pc.col];
        std::copy(src, src + size, &p.data[static_cast<std::size_t>(y) * size]);
      }
      set.coords.push_back(pc);
      set.patches.push_back(std::move(p));
    }
  }
  return set;
}

double mean_abs_difference(const Plane& a, const Plane& b) {
  if (a.width != b.width || a.height != b.height) {
    throw ValidationError("patch dimensions differ");
  }
  // Neumaier summation: the result is within an ulp or two of the exact mean.
  double acc = 0.0, comp = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double v = std::abs(a.data[i] - b.data[i]);
    const double t = acc + v;
    comp += std::abs(acc) >= v ? (acc - t) + v : (v - t) + acc;
    acc = t;
  }
  return (acc + comp) / static_cast<double>(a.size());
}

std::vector<double> patch_delta(const PatchSet& ref, const PatchSet& dist) {
  if (ref.size != dist.size || ref.source_width != dist.source_width ||
      ref.source_height != dist.source_height || ref.coords != dist.coords) {
    throw ValidationError("patch grids of reference and distorted image do not match");
  }
  std::vector<double> delta(ref.count());
  for (std::size_t k = 0; k < ref.count(); ++k) {
    delta[k] = mean_abs_difference(ref.patches[k], dist.patches[k]);
  }
  return delta;
}

FeatureStack feature_stack(const Plane& patch, const GaussianWindow& window) {
  const Moments m = local_moments(patch, window);
  FeatureStack fs;
  fs.lum = patch;
  fs.var = m.var;
  fs.mscn = Plane(patch.width, patch.height);
  for (std::size_t i = 0; i < patch.size(); ++i) {
    const double sigma = std::sqrt(m.var.data[i]);
    fs.mscn.data[i] = sigma == 0.0 ? 0.0 : (patch.data[i] - m.mean.data[i]) / (sigma + kFeatureMscnC);
  }
  return fs;
}

// ---------------------------------------------------------------------------
// Input domain

std::string to_string(InputDomain domain) {
  switch (domain) {
    case InputDomain::linear: return "linear";
    case InputDomain::pu: return "pu";
    case InputDomain::drago: return "drago";
    case InputDomain::reinhard02: return "reinhard02";
    case InputDomain::reinhard05: return "reinhard05";
  }
  return "linear";
}

InputDomain parse_input_domain(const std::string& name) {
  if (name == "linear") return InputDomain::linear;
  if (name == "pu") return InputDomain::pu;
  if (name == "drago") return InputDomain::drago;
  if (name == "reinhard02") return InputDomain::reinhard02;
  if (name == "reinhard05") return InputDomain::reinhard05;
  throw UsageError("unknown preprocessing mode '" + name +
                   "' (expected linear|pu|drago|reinhard02|reinhard05)");
}

HdrImage apply_input_domain(const HdrImage& lum, InputDomain domain, const PuCurve& curve) {
  switch (domain) {
    case InputDomain::linear: return lum;
    case InputDomain::pu: return pu_encode(lum, curve);
    case InputDomain::drago: return tmo_drago(lum);
    case InputDomain::reinhard02: return tmo_reinhard02(lum);
    case InputDomain::reinhard05: return tmo_reinhard05(lum);
  }
  return lum;
}

double input_domain_peak(InputDomain domain, double l_peak, const PuCurve& curve) {
  switch (domain) {
    case InputDomain::linear: return l_peak;
    case InputDomain::pu: return curve.encode(l_peak);
    case InputDomain::drago: return 1.0;
    case InputDomain::reinhard02: return 1.0;
    case InputDomain::reinhard05: return 1.0;
  }
  return l_peak;
}

}  // namespace hdriqa
