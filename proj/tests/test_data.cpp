#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "featmatch/data.hpp"

using namespace featmatch;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::vector<unsigned char>& bytes) {
  const fs::path p = fs::temp_directory_path() / ("featmatch_test_" + name);
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  return p;
}

Dataset labeled_ramp(std::size_t classes, std::size_t per_class) {
  Dataset d;
  d.num_classes = classes;
  d.shape = SampleShape::vector(1);
  d.x = Matrix(classes * per_class, 1);
  for (std::size_t i = 0; i < classes * per_class; ++i) {
    d.x(i, 0) = static_cast<double>(i);
    d.y.push_back(i % classes);
    d.domain.push_back(0);
  }
  return d;
}

}  // namespace

TEST(Blobs, ZeroNoiseSamplesSitOnCentroids) {
  BlobSpec s{3, 5, 2, 3.0, 0.0, 4};
  const BlobData b = make_blobs(s);
  for (std::size_t i = 0; i < b.data.size(); ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(b.data.x(i, j), b.centroids(b.data.y[i], j));
}

TEST(Blobs, SeededAndValid) {
  BlobSpec s{4, 50, 3, 3.0, 0.5, 9};
  const BlobData a = make_blobs(s), b = make_blobs(s);
  EXPECT_EQ(a.data.x, b.data.x);
  EXPECT_NO_THROW(a.data.validate());
  EXPECT_FALSE(make_blobs(s, 1).data.x == a.data.x);
  EXPECT_EQ(make_blobs(s, 1).centroids, a.centroids);
}

TEST(Blobs, ClassMeansNearCentroids) {
  BlobSpec s{4, 2000, 2, 3.0, 0.8, 21};
  const BlobData b = make_blobs(s);
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t j = 0; j < 2; ++j) {
      double m = 0.0;
      for (std::size_t i = 0; i < b.data.size(); ++i)
        if (b.data.y[i] == c) m += b.data.x(i, j);
      m /= 2000.0;
      EXPECT_LT(std::abs(m - b.centroids(c, j)), 3.0 * 0.8 / std::sqrt(2000.0));
    }
  }
}

TEST(Blobs, CentroidsSeparated) {
  BlobSpec s{4, 1, 2, 3.0, 0.5, 2};
  const Matrix c = blob_centroids(s);
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = a + 1; b < 4; ++b)
      EXPECT_GE(std::hypot(c(a, 0) - c(b, 0), c(a, 1) - c(b, 1)), 3.0);
}

TEST(Blobs, ShiftRotatesAndTagsDomain) {
  BlobSpec s{2, 10, 2, 3.0, 0.0, 3};
  DomainShift shift{90.0, 0.0, 1.0};
  const BlobData b = make_blobs(s, 0, &shift);
  for (std::size_t i = 0; i < b.data.size(); ++i) {
    EXPECT_EQ(b.data.domain[i], 1);
    const std::size_t c = b.data.y[i];
    EXPECT_NEAR(b.data.x(i, 0), -b.centroids(c, 1), 1e-12);
    EXPECT_NEAR(b.data.x(i, 1), b.centroids(c, 0), 1e-12);
  }
}

TEST(BinaryImages, TwoRecordHandcraftedFile) {
  // 2x1 single-channel images, 3 classes.
  const auto p = temp_file("two.bin", {2, 0, 255, 0, 51, 102});
  const Dataset d = load_binary_images(p, ImageLayout{2, 1, 1, 3});
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.y, (std::vector<std::size_t>{2, 0}));
  EXPECT_DOUBLE_EQ(d.x(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(d.x(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(d.x(1, 0), 0.2);
  EXPECT_DOUBLE_EQ(d.x(1, 1), 0.4);
  EXPECT_TRUE(d.shape.is_image());
}

TEST(BinaryImages, EmptyTruncatedAndBadLabel) {
  EXPECT_EQ(load_binary_images(temp_file("empty.bin", {}), ImageLayout{2, 1, 1, 3}).size(), 0u);
  EXPECT_THROW(load_binary_images(temp_file("trunc.bin", {1, 2, 3, 4}), ImageLayout{2, 1, 1, 3}), FormatError);
  EXPECT_THROW(load_binary_images(temp_file("label.bin", {3, 0, 0}), ImageLayout{2, 1, 1, 3}), FormatError);
  EXPECT_THROW(load_binary_images("/nonexistent/featmatch.bin", ImageLayout{}), IoError);
}

TEST(Split, BalancedCounts) {
  const Dataset d = labeled_ramp(10, 100);
  auto [lab, unl] = split_labeled(d, 250, 1);
  EXPECT_EQ(lab.size(), 250u);
  EXPECT_EQ(unl.size(), 750u);
  std::vector<std::size_t> per(10, 0);
  for (auto y : lab.y) ++per[y];
  for (auto c : per) EXPECT_EQ(c, 25u);
}

TEST(Split, DisjointAndSeeded) {
  const Dataset d = labeled_ramp(4, 20);
  auto [a_lab, a_unl] = split_labeled(d, 8, 5);
  auto [b_lab, b_unl] = split_labeled(d, 8, 5);
  EXPECT_EQ(a_lab.x, b_lab.x);
  std::set<double> seen;
  for (std::size_t i = 0; i < a_lab.size(); ++i) seen.insert(a_lab.x(i, 0));
  for (std::size_t i = 0; i < a_unl.size(); ++i) EXPECT_FALSE(seen.count(a_unl.x(i, 0)));
  // hidden labels stay aligned with samples
  const auto& hidden = diagnostics::hidden_labels(a_unl);
  for (std::size_t i = 0; i < a_unl.size(); ++i) EXPECT_EQ(hidden[i], static_cast<std::size_t>(a_unl.x(i, 0)) % 4);
}

TEST(Split, AllLabeledAndErrors) {
  const Dataset d = labeled_ramp(2, 5);
  EXPECT_EQ(split_labeled(d, 10, 0).second.size(), 0u);
  EXPECT_THROW(split_labeled(d, 3, 0), ConfigError);
  EXPECT_THROW(split_labeled(d, 12, 0), ConfigError);
}

TEST(Split, Holdout) {
  const Dataset d = labeled_ramp(2, 50);
  auto [keep, hold] = split_holdout(d, 0.1, 3);
  EXPECT_EQ(hold.size(), 10u);
  EXPECT_EQ(keep.size(), 90u);
  EXPECT_THROW(split_holdout(d, 1.0, 0), ConfigError);
}

TEST(MixDomains, ReplacementCountsExact) {
  const UnlabeledSet target(labeled_ramp(2, 50));
  Dataset s = labeled_ramp(2, 50);
  for (auto& v : s.domain) v = 1;
  const UnlabeledSet shifted(s);
  for (double r : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const UnlabeledSet m = mix_domains(target, shifted, r, 7);
    EXPECT_EQ(m.size(), 100u);
    std::size_t n_shift = 0;
    for (int dm : m.domain) n_shift += dm == 1;
    EXPECT_EQ(n_shift, static_cast<std::size_t>(std::llround(r * 100)));
  }
  const UnlabeledSet small(labeled_ramp(2, 4));
  Dataset s8 = labeled_ramp(2, 4);
  for (auto& v : s8.domain) v = 1;
  const UnlabeledSet m = mix_domains(small, UnlabeledSet(s8), 0.75, 1);
  std::size_t n_shift = 0;
  for (int dm : m.domain) n_shift += dm == 1;
  EXPECT_EQ(m.size() - n_shift, 2u);
  EXPECT_EQ(n_shift, 6u);
}

TEST(MixDomains, ZeroRatioIsIdentityAndErrors) {
  const UnlabeledSet target(labeled_ramp(2, 5));
  const UnlabeledSet shifted(labeled_ramp(2, 1));
  EXPECT_EQ(mix_domains(target, shifted, 0.0, 1).x, target.x);
  EXPECT_THROW(mix_domains(target, shifted, 0.5, 1), ConfigError);
  EXPECT_THROW(mix_domains(target, shifted, 1.5, 1), ConfigError);
}

TEST(Batcher, CoversEachSampleOnceAndSeeded) {
  EpochBatcher b(10, 3, 4, false);
  const auto e0 = b.epoch(0);
  EXPECT_EQ(e0.size(), 4u);
  std::multiset<std::size_t> all;
  for (const auto& batch : e0) all.insert(batch.begin(), batch.end());
  EXPECT_EQ(all.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(all.count(i), 1u);
  EXPECT_EQ(e0, EpochBatcher(10, 3, 4, false).epoch(0));
  EXPECT_NE(e0, b.epoch(1));
}

TEST(Batcher, DropLast) {
  EpochBatcher b(10, 3, 0, true);
  EXPECT_EQ(b.batches_per_epoch(), 3u);
  for (const auto& batch : b.epoch(0)) EXPECT_EQ(batch.size(), 3u);
  EXPECT_THROW(EpochBatcher(10, 0, 0, false), ConfigError);
}

TEST(CyclicSampler, RepeatsAndRestoresState) {
  CyclicSampler s(4, 3);
  const auto first = s.next(4);
  EXPECT_EQ(std::set<std::size_t>(first.begin(), first.end()).size(), 4u);
  s.next(3);
  const std::string saved = s.save_state();
  const auto a = s.next(9);
  CyclicSampler r;
  r.load_state(saved);
  EXPECT_EQ(r.next(9), a);
  EXPECT_THROW(r.load_state("garbage"), FormatError);
}
