#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "featmatch/network.hpp"
#include "test_util.hpp"

using namespace featmatch;

namespace {

Network small_net(std::uint64_t seed = 1) {
  ModelSpec s;
  s.input_dim = 3;
  s.hidden = {5, 4};
  s.feature_dim = 6;
  s.embed_dim = 4;
  s.heads = 2;
  s.num_classes = 3;
  Network n(s);
  n.init(seed);
  return n;
}

}  // namespace

TEST(CoreModel, EncoderMatchesNaiveForward) {
  Network n = small_net();
  std::mt19937_64 rng(2);
  const Matrix x = fmtest::random_matrix(7, 3, rng);
  const Matrix got = encoder_forward(n.encoder, x);
  EXPECT_LT(fmtest::max_abs_diff(got, fmtest::naive_encoder(n.encoder, x)), 1e-14);
  for (double v : got.data()) EXPECT_GE(v, 0.0);
}

TEST(CoreModel, ClassifierOutputsDistributions) {
  Network n = small_net();
  std::mt19937_64 rng(3);
  const Matrix f = fmtest::random_matrix(5, 6, rng, 0.0, 2.0);
  const Matrix p = classifier_forward(n.classifier, f);
  EXPECT_LT(fmtest::max_abs_diff(p, fmtest::naive_classifier(n.classifier, f)), 1e-14);
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double s = 0.0;
    for (double v : p.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(CoreModel, ShapeValidation) {
  Network n = small_net();
  EXPECT_THROW(encoder_forward(n.encoder, Matrix(2, 4)), ConfigError);
  EXPECT_THROW(classifier_forward(n.classifier, Matrix(2, 5)), ConfigError);
  EXPECT_THROW(ClassifierParams(4, 1), ConfigError);
  EXPECT_THROW(EncoderParams(0, {}, 3), ConfigError);
  EXPECT_THROW(EncoderParams(2, {0}, 3), ConfigError);
}

TEST(CoreModel, InitIsSeededAndBounded) {
  Network a = small_net(9), b = small_net(9), c = small_net(10);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->value, pb[i]->value);
    any_diff |= !(pa[i]->value == pc[i]->value);
    const double bound = 1.0 / std::sqrt(static_cast<double>(pa[i]->value.rows()));
    if (pa[i]->decay) {
      for (double v : pa[i]->value.data()) EXPECT_LE(std::abs(v), bound);
    }
  }
  EXPECT_TRUE(any_diff);
}

TEST(CoreModel, ParameterListIsUniqueAndOrdered) {
  Network n = small_net();
  const auto ps = n.parameters();
  std::set<std::string> names;
  for (const auto* p : ps) names.insert(p->name);
  EXPECT_EQ(names.size(), ps.size());
  EXPECT_EQ(ps.front()->name, "enc0.weight");
  EXPECT_EQ(ps.back()->name, "augf.refine.bias");
  std::size_t expected = 0;
  // encoder 3->5->4->6, classifier 6->3, embed 6->4, attend 8->6, refine 6->6
  for (auto [i, o] : {std::pair{3, 5}, {5, 4}, {4, 6}, {6, 3}, {6, 4}, {8, 6}, {6, 6}}) expected += i * o + o;
  EXPECT_EQ(n.parameter_count(), expected);
  for (const auto* p : ps) {
    const bool is_bias = p->name.size() >= 5 && p->name.compare(p->name.size() - 5, 5, ".bias") == 0;
    EXPECT_EQ(p->decay, !is_bias) << p->name;
  }
}

TEST(CoreModel, PredictWithAndWithoutPrototypes) {
  Network n = small_net();
  std::mt19937_64 rng(4);
  const Matrix x = fmtest::random_matrix(4, 3, rng);
  PrototypeSet ps;
  ps.feature_dim = 6;
  ps.by_class = {fmtest::random_matrix(2, 6, rng, 0, 1), fmtest::random_matrix(1, 6, rng, 0, 1), Matrix(0, 6)};
  const Matrix f = fmtest::naive_encoder(n.encoder, x);
  EXPECT_LT(fmtest::max_abs_diff(predict(n, x, nullptr), fmtest::naive_classifier(n.classifier, f)), 1e-14);
  const Matrix g = fmtest::naive_augf(n.augf, f, ps.stacked());
  EXPECT_LT(fmtest::max_abs_diff(predict(n, x, &ps), fmtest::naive_classifier(n.classifier, g)), 1e-12);
}
