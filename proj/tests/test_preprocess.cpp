// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hdriqa/error.hpp"
#include "hdriqa/preprocess.hpp"
#include "hdriqa/rng.hpp"

using namespace hdriqa;

namespace {

// Brute-force Gaussian-window moments with edge-repeating reflection.
int reflect(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

struct BruteMoments {
  double mean = 0.0;
  double var = 0.0;
};

BruteMoments brute_moments(const Plane& img, int row, int col, int size, double sigma) {
  const int r = size / 2;
  double wsum = 0.0;
  std::vector<double> w1(size);
  for (int i = -r; i <= r; ++i) {
    w1[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    wsum += w1[i + r];
  }
  double m1 = 0.0, m2 = 0.0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const double w = w1[dy + r] * w1[dx + r] / (wsum * wsum);
      const double v = img.at(reflect(row + dy, img.height), reflect(col + dx, img.width));
      m1 += w * v;
      m2 += w * v * v;
    }
  }
  return {m1, std::max(0.0, m2 - m1 * m1)};
}

Plane random_plane(int w, int h, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Plane p(w, h);
  for (double& v : p.data) v = uniform(rng, lo, hi);
  return p;
}

HdrImage random_lum(int w, int h, Rng& rng, double lo, double hi) {
  HdrImage img(w, h, 1);
  for (double& v : img.data) v = uniform(rng, lo, hi);
  return img;
}

}  // namespace

// ---------------------------------------------------------------------------
// PU encoding

TEST(PuCurve, KnotsAndMidpoints) {
  PuCurve c;
  c.knots = {{-1.0, 0.0}, {0.0, 10.0}, {2.0, 50.0}};
  EXPECT_EQ(c.encode(0.1), 0.0);
  EXPECT_EQ(c.encode(1.0), 10.0);
  EXPECT_EQ(c.encode(100.0), 50.0);
  // log-space midpoint of 1 and 100 is 10.
  EXPECT_NEAR(c.encode(10.0), 30.0, 1e-12);
  EXPECT_NEAR(c.encode(std::pow(10.0, -0.5)), 5.0, 1e-12);
  // Clamped outside coverage.
  EXPECT_EQ(c.encode(1e-9), 0.0);
  EXPECT_EQ(c.encode(0.0), 0.0);
  EXPECT_EQ(c.encode(1e9), 50.0);
}

TEST(PuCurve, ValidationRejectsBadTables) {
  PuCurve one;
  one.knots = {{0.0, 0.0}};
  EXPECT_THROW(one.validate(), ValidationError);
  PuCurve flat;
  flat.knots = {{0.0, 1.0}, {1.0, 1.0}};
  EXPECT_THROW(flat.validate(), ValidationError);
}

TEST(PuCurve, DefaultTableCoversRangeAndIsMonotone) {
  const PuCurve c = default_pu_curve();
  ASSERT_NO_THROW(c.validate());
  EXPECT_LE(c.knots.front().first, -5.0);
  EXPECT_GE(c.knots.back().first, 4.0);
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    double a = std::pow(10.0, uniform(rng, -6.0, 5.0));
    double b = std::pow(10.0, uniform(rng, -6.0, 5.0));
    if (a > b) std::swap(a, b);
    ASSERT_LE(c.encode(a), c.encode(b));
  }
}

TEST(PuCurve, BuiltInTableMatchesShippedFile) {
  const PuCurve file = load_pu_curve(std::filesystem::path(HDRIQA_SOURCE_DIR) / "core/data/pu_default.txt");
  EXPECT_EQ(default_pu_curve().knots, file.knots);
}

TEST(PuCurve, EncodeImageAppliesPointwise) {
  const PuCurve c = default_pu_curve();
  HdrImage img(3, 1, 1);
  img.data = {0.5, 100.0, 4000.0};
  const HdrImage out = pu_encode(img, c);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(out.data[i], c.encode(img.data[i]));
}

// ---------------------------------------------------------------------------
// Tone mapping

TEST(Drago, ConstantMaxAndMonotone) {
  const HdrImage flat(4, 4, 1, 250.0);
  const HdrImage f = tmo_drago(flat);
  for (double v : f.data) EXPECT_EQ(v, f.data[0]);

  Rng rng(2);
  HdrImage img = random_lum(16, 16, rng, 0.0, 3000.0);
  img.data[5] = 3500.0;
  const HdrImage out = tmo_drago(img, 0.85, 100.0);
  // At L_max the log base is log(10), leaving ld_max * 0.01.
  EXPECT_NEAR(out.data[5], 100.0 * 0.01, 1e-12);
  std::vector<std::size_t> idx(img.data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return img.data[a] < img.data[b]; });
  for (std::size_t i = 1; i < idx.size(); ++i) ASSERT_LE(out.data[idx[i - 1]], out.data[idx[i]]);
  for (double v : out.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 100.0 * 0.01 + 1e-12);
  }
  EXPECT_THROW(tmo_drago(HdrImage(2, 2, 1, 0.0)), ValidationError);
}

TEST(Reinhard02, ConstantImageAndBounds) {
  const double c = 40.0, key = 0.18;
  const HdrImage out = tmo_reinhard02(HdrImage(3, 3, 1, c), key);
  const double l_avg = std::exp(std::log(1e-6 + c));
  const double scaled = key * c / l_avg;
  for (double v : out.data) EXPECT_NEAR(v, scaled / (1.0 + scaled), 1e-15);

  Rng rng(3);
  const HdrImage img = random_lum(10, 10, rng, 0.0, 1e5);
  for (double v : tmo_reinhard02(img).data) EXPECT_LT(v, 1.0);
  // Doubling the key doubles the pre-compression value v / (1 - v).
  const HdrImage a = tmo_reinhard02(img, 0.1), b = tmo_reinhard02(img, 0.2);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    if (a.data[i] < 0.9) {
      EXPECT_NEAR(b.data[i] / (1 - b.data[i]), 2 * a.data[i] / (1 - a.data[i]), 1e-9);
    }
  }
  EXPECT_THROW(tmo_reinhard02(HdrImage(2, 2, 1, 0.0)), ValidationError);
}

TEST(Reinhard05, MidpointBoundsAndMonotone) {
  Reinhard05Params p;
  p.contrast = 1.0;
  // Constant image, f = 0, m = 1, global adaptation: sigma equals the pixel.
  const HdrImage out = tmo_reinhard05(HdrImage(3, 3, 1, 75.0), p);
  for (double v : out.data) EXPECT_NEAR(v, 0.5, 1e-12);

  Rng rng(4);
  HdrImage rgb(12, 12, 3);
  for (double& v : rgb.data) v = uniform(rng, 0.0, 4000.0);
  const HdrImage t = tmo_reinhard05(rgb);
  for (double v : t.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  // Output equals I / (I + sigma) with the reported sigma.
  const double s = reinhard05_sigma(rgb, {}, 3, 4, 1);
  const double i = rgb.at(3, 4, 1);
  EXPECT_NEAR(t.at(3, 4, 1), i / (i + s), 1e-14);

  // With global adaptation sigma is shared by all pixels of a channel.
  HdrImage lum = random_lum(12, 12, rng, 0.0, 4000.0);
  const HdrImage tl = tmo_reinhard05(lum);
  std::vector<std::size_t> idx(lum.data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return lum.data[a] < lum.data[b]; });
  for (std::size_t k = 1; k < idx.size(); ++k) ASSERT_LE(tl.data[idx[k - 1]], tl.data[idx[k]]);
  EXPECT_THROW(tmo_reinhard05(HdrImage(2, 2, 1, 0.0)), ValidationError);
}

TEST(InputDomain, NamesRoundTrip) {
  for (InputDomain d : {InputDomain::linear, InputDomain::pu, InputDomain::drago, InputDomain::reinhard02,
                        InputDomain::reinhard05}) {
    EXPECT_EQ(parse_input_domain(to_string(d)), d);
  }
  EXPECT_THROW(parse_input_domain("mantiuk"), Error);
}

// ---------------------------------------------------------------------------
// Local statistics

TEST(GaussianWindow, WeightsNormalized) {
  const auto w = gaussian_weights({});
  ASSERT_EQ(w.size(), 7u);
  EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-15);
  EXPECT_EQ(w[0], w[6]);
  EXPECT_THROW(gaussian_weights({6, 1.0}), ValidationError);
}

TEST(LocalStats, MatchBruteForceMoments) {
  Rng rng(5);
  const Plane img = random_plane(11, 9, rng, 0.0, 50.0);
  const GaussianWindow win;
  const Plane mu = local_mean(img, win);
  const Plane var = variance_map(img, win);
  const Plane mscn = mscn_map(img, 0.01, win);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const BruteMoments m = brute_moments(img, r, c, win.size, win.sigma);
      ASSERT_NEAR(mu.at(r, c), m.mean, 1e-11);
      ASSERT_NEAR(var.at(r, c), m.var, 1e-9);
      ASSERT_NEAR(mscn.at(r, c), (img.at(r, c) - m.mean) / (std::sqrt(m.var) + 0.01), 1e-8);
    }
  }
}

TEST(LocalStats, ConstantImageGivesZeros) {
  const Plane flat(9, 9, 123.0);
  for (double v : variance_map(flat).data) EXPECT_NEAR(v, 0.0, 1e-9);
  for (double v : mscn_map(flat, 0.0).data) EXPECT_NEAR(v, 0.0, 1e-6);
  for (double v : mscn_map(flat, 0.01).data) EXPECT_NEAR(v, 0.0, 1e-6);
}

TEST(LocalStats, SingleBrightPixel) {
  Plane img(9, 9, 0.0);
  img.at(4, 4) = 1.0;
  const BruteMoments m = brute_moments(img, 4, 4, 7, 7.0 / 6.0);
  const double c = 0.01;
  EXPECT_NEAR(mscn_map(img, c).at(4, 4), (1.0 - m.mean) / (std::sqrt(m.var) + c), 1e-12);
}

TEST(LocalStats, ScalingLaws) {
  Rng rng(6);
  const Plane img = random_plane(12, 12, rng, 0.0, 10.0);
  Plane scaled = img;
  const double a = 37.5;
  for (double& v : scaled.data) v *= a;
  const Plane v0 = variance_map(img), v1 = variance_map(scaled);
  const Plane m0 = mscn_map(img, 0.0), m1 = mscn_map(scaled, 0.0);
  for (std::size_t i = 0; i < img.size(); ++i) {
    EXPECT_NEAR(v1.data[i], a * a * v0.data[i], 1e-9 * a * a * (1 + v0.data[i]));
    EXPECT_NEAR(m1.data[i], m0.data[i], 1e-9);
  }
  // The stabilizer stops mattering as magnitudes grow.
  Plane big = img;
  for (double& v : big.data) v *= 1000.0;
  const Plane c0 = mscn_map(big, 0.0), c1 = mscn_map(big, 0.01);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < big.size(); ++i) {
    num += std::abs(c1.data[i] - c0.data[i]);
    den += std::abs(c0.data[i]);
  }
  EXPECT_LT(num / den, 0.01);
}

TEST(LocalStats, CheckerboardHasPositiveVariance) {
  Plane img(10, 10);
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 10; ++c) img.at(r, c) = (r + c) % 2;
  const Plane var = variance_map(img);
  for (int r = 3; r < 7; ++r) {
    for (int c = 3; c < 7; ++c) {
      EXPECT_GT(var.at(r, c), 0.0);
      EXPECT_NEAR(var.at(r, c), brute_moments(img, r, c, 7, 7.0 / 6.0).var, 1e-12);
    }
  }
}

TEST(LocalStats, WindowLargerThanImageIsRejected) {
  EXPECT_THROW(mscn_map(Plane(5, 5, 1.0), 0.01), ValidationError);
  EXPECT_THROW(mscn_map(Plane(8, 8, 1.0), -1.0), ValidationError);
}

// ---------------------------------------------------------------------------
// Patches

TEST(Patches, GridArithmetic) {
  const PatchSet a = extract_patches(Plane(64, 64), 32, 32);
  ASSERT_EQ(a.count(), 4u);
  EXPECT_EQ(a.coords, (std::vector<PatchCoord>{{0, 0}, {0, 32}, {32, 0}, {32, 32}}));
  EXPECT_EQ(extract_patches(Plane(70, 70), 32, 32).count(), 4u);
  const PatchSet s = extract_patches(Plane(64, 64), 32, 16);
  EXPECT_EQ(s.count(), 9u);
  EXPECT_EQ(s.grid_rows, 3);
  EXPECT_THROW(extract_patches(Plane(31, 64), 32, 32), ValidationError);
  EXPECT_THROW(extract_patches(Plane(64, 64), 32, 0), ValidationError);
}

TEST(Patches, ContentsAndOrdering) {
  Rng rng(7);
  const Plane img = random_plane(80, 50, rng);
  const PatchSet set = extract_patches(img, 16, 12);
  for (std::size_t k = 0; k < set.count(); ++k) {
    const PatchCoord pc = set.coords[k];
    ASSERT_LE(pc.row + 16, img.height);
    ASSERT_LE(pc.col + 16, img.width);
    if (k > 0) {
      const PatchCoord prev = set.coords[k - 1];
      ASSERT_TRUE(prev.row < pc.row || (prev.row == pc.row && prev.col < pc.col));
    }
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) ASSERT_EQ(set.patches[k].at(y, x), img.at(pc.row + y, pc.col + x));
  }
  // Coordinates do not depend on content.
  EXPECT_EQ(extract_patches(Plane(80, 50, 3.0), 16, 12).coords, set.coords);
}

TEST(PatchDelta, WorkedExamples) {
  const PatchSet same = extract_patches(Plane(64, 64, 5.0));
  for (double d : patch_delta(same, same)) EXPECT_EQ(d, 0.0);
  const auto d = patch_delta(extract_patches(Plane(64, 64, 100.0)), extract_patches(Plane(64, 64, 90.0)));
  for (double v : d) EXPECT_EQ(v, 10.0);

  Plane r(2, 2), s(2, 2);
  r.data = {0, 2, 4, 6};
  s.data = {1, 1, 5, 5};
  EXPECT_EQ(patch_delta(extract_patches(r, 2, 2), extract_patches(s, 2, 2)), std::vector<double>{1.0});
}

TEST(PatchDelta, SymmetryTriangleAndGridMismatch) {
  Rng rng(8);
  const auto a = extract_patches(random_plane(64, 64, rng)), b = extract_patches(random_plane(64, 64, rng)),
             c = extract_patches(random_plane(64, 64, rng));
  const auto ab = patch_delta(a, b), ba = patch_delta(b, a), bc = patch_delta(b, c), ac = patch_delta(a, c);
  for (std::size_t k = 0; k < ab.size(); ++k) {
    EXPECT_EQ(ab[k], ba[k]);
    EXPECT_LE(ac[k], ab[k] + bc[k] + 1e-15);
  }
  EXPECT_THROW(patch_delta(a, extract_patches(random_plane(64, 64, rng), 32, 16)), ValidationError);
}

TEST(FeatureStack, ChannelsMatchStandaloneMaps) {
  Rng rng(9);
  const Plane patch = random_plane(32, 32, rng, 0.0, 4000.0);
  const FeatureStack fs = feature_stack(patch);
  EXPECT_EQ(fs.lum.data, patch.data);
  const Plane var = variance_map(patch), mscn = mscn_map(patch, kFeatureMscnC);
  for (std::size_t i = 0; i < patch.size(); ++i) {
    EXPECT_NEAR(fs.var.data[i], var.data[i], 1e-9 * (1 + var.data[i]));
    EXPECT_GE(fs.var.data[i], 0.0);
    EXPECT_NEAR(fs.mscn.data[i], mscn.data[i], 1e-9);
  }
  const FeatureStack flat = feature_stack(Plane(32, 32, 42.0));
  for (std::size_t i = 0; i < 32 * 32; ++i) {
    EXPECT_EQ(flat.lum.data[i], 42.0);
    EXPECT_NEAR(flat.var.data[i], 0.0, 1e-9);
    EXPECT_NEAR(flat.mscn.data[i], 0.0, 1e-6);
  }
}
