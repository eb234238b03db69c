#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "featmatch/autodiff.hpp"
#include "featmatch/error.hpp"
#include "featmatch/matrix.hpp"
#include "featmatch/rng.hpp"

namespace featmatch {

// Fully connected layer computing x * weight + bias, weight is (in x out).
struct DenseLayer {
  Parameter weight;
  Parameter bias;

  DenseLayer() = default;
  DenseLayer(const std::string& name, std::size_t in, std::size_t out)
      : weight(name + ".weight", Matrix(in, out)), bias(name + ".bias", Matrix(1, out), false) {}

  std::size_t in_dim() const { return weight.value.rows(); }
  std::size_t out_dim() const { return weight.value.cols(); }

  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
  void init_uniform(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(in_dim(), 1)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : weight.value.data()) v = dist(rng);
    for (double& v : bias.value.data()) v = dist(rng);
  }

  void set_zero() {
    weight.value.fill(0.0);
    bias.value.fill(0.0);
  }

  Var apply(Tape& t, Var x) {
    return ops::add_row(ops::matmul(x, t.param(weight)), t.param(bias));
  }
};

// MLP encoder; relu after every layer, including the feature layer, so the
// features are nonnegative.
struct EncoderParams {
  std::size_t input_dim = 0;
  std::vector<DenseLayer> layers;

  EncoderParams() = default;
  EncoderParams(std::size_t d_in, const std::vector<std::size_t>& hidden, std::size_t d_feat) : input_dim(d_in) {
    if (d_in == 0 || d_feat == 0) throw ConfigError("encoder: input and feature dims must be positive");
    std::size_t prev = d_in;
    std::size_t i = 0;
    for (std::size_t h : hidden) {
      if (h == 0) throw ConfigError("encoder: hidden dims must be positive");
      layers.emplace_back("enc" + std::to_string(i++), prev, h);
      prev = h;
    }
    layers.emplace_back("enc" + std::to_string(i), prev, d_feat);
  }

  std::size_t feature_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

  void validate() const {
    if (layers.empty()) throw ConfigError("encoder: no layers");
    std::size_t prev = input_dim;
    for (const auto& l : layers) {
      if (l.in_dim() != prev || l.bias.value.cols() != l.out_dim() || l.bias.value.rows() != 1) {
        throw ConfigError("encoder: inconsistent layer shapes");
      }
      prev = l.out_dim();
    }
  }
};

struct ClassifierParams {
  DenseLayer fc;

  ClassifierParams() = default;
  ClassifierParams(std::size_t d_feat, std::size_t num_classes) : fc("clf", d_feat, num_classes) {
    if (num_classes < 2) throw ConfigError("classifier: need at least two classes");
  }

  std::size_t num_classes() const { return fc.out_dim(); }
  std::size_t feature_dim() const { return fc.in_dim(); }
};

inline Var encoder_forward(Tape& t, EncoderParams& enc, Var x) {
  if (t.value(x).cols() != enc.input_dim) {
    throw ConfigError("encoder_forward: input has " + std::to_string(t.value(x).cols()) + " columns, expected " +
                      std::to_string(enc.input_dim));
  }
  Var h = x;
  for (auto& layer : enc.layers) h = ops::relu(layer.apply(t, h));
  return h;
}

// Returns class probabilities (softmax of the logits).
inline Var classifier_forward(Tape& t, ClassifierParams& clf, Var f) {
  if (t.value(f).cols() != clf.feature_dim()) {
    throw ConfigError("classifier_forward: features have " + std::to_string(t.value(f).cols()) +
                      " columns, expected " + std::to_string(clf.feature_dim()));
  }
  return ops::softmax_rows(clf.fc.apply(t, f));
}

// Value-only conveniences. The tape only reads parameter values; backward()
// is never called on it, so the parameters are left untouched.
inline Matrix encoder_forward(const EncoderParams& enc, const Matrix& x) {
  Tape t;
  auto& e = const_cast<EncoderParams&>(enc);
  return t.value(encoder_forward(t, e, t.constant(x)));
}

inline Matrix classifier_forward(const ClassifierParams& clf, const Matrix& f) {
  Tape t;
  auto& c = const_cast<ClassifierParams&>(clf);
  return t.value(classifier_forward(t, c, t.constant(f)));
}

}  // namespace featmatch
