#include <gtest/gtest.h>

#include <cmath>

#include "featmatch/data.hpp"
#include "featmatch/image_augment.hpp"

using namespace featmatch;

namespace {

const SampleShape kRamp = SampleShape::image(3, 3, 1);

std::vector<double> ramp9() {
  std::vector<double> v(9);
  for (std::size_t i = 0; i < 9; ++i) v[i] = static_cast<double>(i + 1) / 10.0;
  return v;
}

std::size_t nearest_centroid(std::span<const double> x, const Matrix& centroids) {
  std::size_t best = 0;
  double bd = 1e300;
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    double d = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) d += (x[j] - centroids(c, j)) * (x[j] - centroids(c, j));
    if (d < bd) {
      bd = d;
      best = c;
    }
  }
  return best;
}

}  // namespace

TEST(ImageAugment, TranslateRampByHand) {
  // 0.1 0.2 0.3        0   0.1 0.2
  // 0.4 0.5 0.6  dx=1  0   0.4 0.5
  // 0.7 0.8 0.9   ->   0   0.7 0.8
  auto v = ramp9();
  translate_image(v, kRamp, 1, 0);
  const std::vector<double> want{0, 0.1, 0.2, 0, 0.4, 0.5, 0, 0.7, 0.8};
  for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(v[i], want[i]) << i;

  auto w = ramp9();
  translate_image(w, kRamp, 0, -1);
  const std::vector<double> want_up{0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0, 0, 0};
  for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(w[i], want_up[i]) << i;
}

TEST(ImageAugment, FlipReversesRows) {
  auto v = ramp9();
  flip_horizontal(v, kRamp);
  const std::vector<double> want{0.3, 0.2, 0.1, 0.6, 0.5, 0.4, 0.9, 0.8, 0.7};
  for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(v[i], want[i]);
}

TEST(ImageAugment, PhotometricOpsByHand) {
  auto b = ramp9();
  apply_op(b, kRamp, "brightness", 10.0, 0);  // +0.3, clamped
  EXPECT_NEAR(b[0], 0.4, 1e-15);
  EXPECT_DOUBLE_EQ(b[8], 1.0);

  auto s = ramp9();
  apply_op(s, kRamp, "solarize", 5.0, 0);  // threshold 0.5
  EXPECT_DOUBLE_EQ(s[4], 0.5);
  EXPECT_NEAR(s[5], 0.4, 1e-15);
  EXPECT_NEAR(s[8], 0.1, 1e-15);

  std::vector<double> p{200.0 / 255.0};
  apply_op(p, SampleShape::image(1, 1, 1), "posterize", 10.0, 0);  // 4 bits, step 16
  EXPECT_NEAR(p[0], 192.0 / 255.0, 1e-15);

  std::vector<double> c{0.4, 0.6};
  apply_op(c, SampleShape::image(1, 2, 1), "contrast", 10.0, 0);  // factor 1.5 about 0.5
  EXPECT_NEAR(c[0], 0.35, 1e-15);
  EXPECT_NEAR(c[1], 0.65, 1e-15);
}

TEST(ImageAugment, ZeroMagnitudeGeometricOpsAreIdentity) {
  for (const char* op : {"rotate", "shear", "translate_x", "translate_y"}) {
    auto v = ramp9();
    apply_op(v, kRamp, op, 0.0, 0);
    EXPECT_EQ(v, ramp9()) << op;
  }
}

TEST(ImageAugment, ImageOpsStayInUnitRange) {
  const SampleShape shape = SampleShape::image(4, 4, 3);
  Rng rng = make_stream(1);
  std::uniform_real_distribution<double> u(0, 1);
  Matrix x(50, shape.dim());
  for (double& v : x.data()) v = u(rng);
  const Matrix out = strong_augment(x, shape, AugPolicy{}, rng);
  for (double v : out.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(ImageAugment, StrongAugmentIsReplayableFromLog) {
  for (const SampleShape& shape : {SampleShape::image(4, 4, 2), SampleShape::vector(3)}) {
    Rng data_rng = make_stream(2);
    std::uniform_real_distribution<double> u(0, 1);
    Matrix x(20, shape.dim());
    for (double& v : x.data()) v = u(data_rng);
    Rng rng = make_stream(3);
    AugLog log;
    const Matrix out = strong_augment(x, shape, AugPolicy{}, rng, &log);
    ASSERT_EQ(log.size(), 20u);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      ASSERT_EQ(log[i].size(), 2u);
      std::vector<double> row(x.row(i).begin(), x.row(i).end());
      for (const auto& op : log[i]) {
        EXPECT_LE(std::abs(op.magnitude), kMaxMagnitude);
        apply_op(row, shape, op.op, op.magnitude, op.aux_seed);
      }
      for (std::size_t j = 0; j < row.size(); ++j) EXPECT_EQ(row[j], out(i, j));
    }
  }
}

TEST(ImageAugment, SameStreamSameOutput) {
  const SampleShape shape = SampleShape::vector(2);
  Matrix x{{1.0, 2.0}, {-1.0, 0.5}};
  Rng a = make_stream(9, 1), b = make_stream(9, 1);
  EXPECT_EQ(strong_augment(x, shape, AugPolicy{}, a), strong_augment(x, shape, AugPolicy{}, b));
  Rng c = make_stream(9, 1), d = make_stream(9, 1);
  EXPECT_EQ(weak_augment(x, shape, WeakPolicy{}, c), weak_augment(x, shape, WeakPolicy{}, d));
}

TEST(ImageAugment, OpsRestrictToPolicyList) {
  AugPolicy p;
  p.ops = {"scale"};
  Rng rng = make_stream(4);
  AugLog log;
  strong_augment(Matrix{{1.0, 1.0}}, SampleShape::vector(2), p, rng, &log);
  for (const auto& op : log[0]) EXPECT_EQ(op.op, "scale");
}

TEST(ImageAugment, WeakVectorJitterHasConfiguredScale) {
  Matrix x(20000, 1);
  Rng rng = make_stream(6);
  const Matrix out = weak_augment(x, SampleShape::vector(1), WeakPolicy{}, rng);
  double ss = 0.0;
  for (double v : out.data()) ss += v * v;
  EXPECT_NEAR(std::sqrt(ss / 20000.0), 0.02, 0.001);
}

TEST(ImageAugment, StrongAugmentPreservesBlobLabels) {
  BlobSpec spec;
  spec.classes = 4;
  spec.per_class = 2500;
  spec.noise_sigma = 0.8;
  spec.seed = 11;
  const BlobData blobs = make_blobs(spec);
  Rng rng = make_stream(12);
  const Matrix out = strong_augment(blobs.data.x, blobs.data.shape, AugPolicy{}, rng);
  std::size_t same = 0;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    same += nearest_centroid(out.row(i), blobs.centroids) == nearest_centroid(blobs.data.x.row(i), blobs.centroids);
  }
  const double frac = static_cast<double>(same) / static_cast<double>(out.rows());
  RecordProperty("preserved_fraction", std::to_string(frac));
  EXPECT_GE(frac, 0.99);
}

TEST(ImageAugment, Errors) {
  AugPolicy bad;
  bad.ops = {"rotate"};
  Rng rng = make_stream(0);
  EXPECT_THROW(strong_augment(Matrix{{1.0}}, SampleShape::vector(1), bad, rng), ConfigError);
  bad.ops = {"nonsense"};
  EXPECT_THROW(strong_augment(Matrix(1, 4), SampleShape::image(2, 2, 1), bad, rng), ConfigError);
  AugPolicy neg;
  neg.magnitude = -1.0;
  EXPECT_THROW(strong_augment(Matrix{{1.0}}, SampleShape::vector(1), neg, rng), ConfigError);
}
