#pragma once

// Input-space augmentation: a weak transform (flip + small translation for
// images, small Gaussian jitter for vectors) and a RandAugment-style strong
// transform that applies N ops drawn uniformly with replacement, each with a
// magnitude drawn uniformly from [-M, M].
//
// Magnitudes live on a 0..10 scale; s = m / 10 in [-1, 1] is mapped onto
// each op's natural range. Every op is a no-op at s = 0.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "featmatch/data.hpp"
#include "featmatch/error.hpp"
#include "featmatch/matrix.hpp"
#include "featmatch/rng.hpp"

namespace featmatch {

inline constexpr double kMaxMagnitude = 10.0;

struct WeakPolicy {
  bool flip = true;
  double max_translate_frac = 0.125;  // of the image width / height
  double jitter_sigma = 0.02;         // vector data
};

struct AugPolicy {
  std::size_t n = 2;
  double magnitude = kMaxMagnitude;
  std::vector<std::string> ops;  // empty: every op valid for the sample kind
};

struct AppliedOp {
  std::string op;
  double magnitude = 0.0;
  std::uint64_t aux_seed = 0;  // drives op-internal randomness (noise, chosen coordinate)

  friend bool operator==(const AppliedOp&, const AppliedOp&) = default;
};

// Ops applied to each sample, in application order.
using AugLog = std::vector<std::vector<AppliedOp>>;

inline const std::vector<std::string>& image_ops() {
  static const std::vector<std::string> ops{"brightness", "contrast", "rotate",    "translate_x",
                                            "translate_y", "shear",   "posterize", "solarize"};
  return ops;
}

inline const std::vector<std::string>& vector_ops() {
  static const std::vector<std::string> ops{"scale", "rotate2d", "jitter", "mask", "translate"};
  return ops;
}

inline std::vector<std::string> resolve_ops(const AugPolicy& policy, const SampleShape& shape) {
  const auto& valid = shape.is_image() ? image_ops() : vector_ops();
  if (policy.ops.empty()) return valid;
  for (const auto& op : policy.ops) {
    if (std::find(valid.begin(), valid.end(), op) == valid.end()) {
      throw ConfigError("augmentation: unknown op '" + op + "' for " + (shape.is_image() ? "image" : "vector") +
                        " data");
    }
  }
  return policy.ops;
}

namespace aug_detail {

inline void clamp01(std::span<double> x) {
  for (double& v : x) v = std::clamp(v, 0.0, 1.0);
}

// Resamples every channel with nearest-neighbour lookup: output pixel (r, c)
// reads source (src_r, src_c) = map(r, c); out-of-range reads are zero.
template <typename Map>
void remap(std::span<double> x, const SampleShape& s, Map map) {
  const std::vector<double> src(x.begin(), x.end());
  const std::size_t hw = s.height * s.width;
  for (std::size_t ch = 0; ch < s.channels; ++ch) {
    for (std::size_t r = 0; r < s.height; ++r) {
      for (std::size_t c = 0; c < s.width; ++c) {
        const auto [sr, sc] = map(static_cast<double>(r), static_cast<double>(c));
        const long ir = std::lround(sr);
        const long ic = std::lround(sc);
        double v = 0.0;
        if (ir >= 0 && ic >= 0 && ir < static_cast<long>(s.height) && ic < static_cast<long>(s.width)) {
          v = src[ch * hw + static_cast<std::size_t>(ir) * s.width + static_cast<std::size_t>(ic)];
        }
        x[ch * hw + r * s.width + c] = v;
      }
    }
  }
}

}  // namespace aug_detail

// Integer shift with zero padding: output(r, c) = input(r - dy, c - dx).
inline void translate_image(std::span<double> x, const SampleShape& s, long dx, long dy) {
  aug_detail::remap(x, s, [dx, dy](double r, double c) {
    return std::pair<double, double>{r - static_cast<double>(dy), c - static_cast<double>(dx)};
  });
}

inline void flip_horizontal(std::span<double> x, const SampleShape& s) {
  const std::size_t hw = s.height * s.width;
  for (std::size_t ch = 0; ch < s.channels; ++ch) {
    for (std::size_t r = 0; r < s.height; ++r) {
      auto* row = x.data() + ch * hw + r * s.width;
      std::reverse(row, row + s.width);
    }
  }
}

// Applies one named op in place. Deterministic given (op, magnitude, aux_seed).
inline void apply_op(std::span<double> x, const SampleShape& shape, std::string_view op, double magnitude,
                     std::uint64_t aux_seed) {
  const double s = magnitude / kMaxMagnitude;
  Rng aux(aux_seed);
  if (shape.is_image()) {
    const double cy = (static_cast<double>(shape.height) - 1.0) / 2.0;
    const double cx = (static_cast<double>(shape.width) - 1.0) / 2.0;
    if (op == "brightness") {
      for (double& v : x) v += 0.3 * s;
    } else if (op == "contrast") {
      double mean = 0.0;
      for (double v : x) mean += v;
      mean /= static_cast<double>(std::max<std::size_t>(x.size(), 1));
      const double factor = 1.0 + 0.5 * s;
      for (double& v : x) v = mean + factor * (v - mean);
    } else if (op == "rotate") {
      if (s == 0.0) return;
      const double a = 30.0 * s * std::numbers::pi / 180.0;
      const double ca = std::cos(a), sa = std::sin(a);
      aug_detail::remap(x, shape, [=](double r, double c) {
        const double yr = r - cy, xc = c - cx;
        return std::pair<double, double>{cy + ca * yr - sa * xc, cx + sa * yr + ca * xc};
      });
    } else if (op == "translate_x") {
      translate_image(x, shape, std::lround(0.3 * s * static_cast<double>(shape.width)), 0);
    } else if (op == "translate_y") {
      translate_image(x, shape, 0, std::lround(0.3 * s * static_cast<double>(shape.height)));
    } else if (op == "shear") {
      if (s == 0.0) return;
      const double k = 0.3 * s;
      aug_detail::remap(x, shape,
                        [=](double r, double c) { return std::pair<double, double>{r, c - k * (r - cy)}; });
    } else if (op == "posterize") {
      const long bits = 8 - std::lround(4.0 * std::abs(s));
      if (bits >= 8) return;
      const double step = std::pow(2.0, static_cast<double>(8 - bits));
      for (double& v : x) v = std::floor(v * 255.0 / step) * step / 255.0;
    } else if (op == "solarize") {
      const double threshold = 1.0 - std::abs(s);
      for (double& v : x) {
        if (v > threshold) v = 1.0 - v;
      }
    } else {
      throw ConfigError("augmentation: unknown image op '" + std::string(op) + "'");
    }
    aug_detail::clamp01(x);
    return;
  }

  if (op == "scale") {
    for (double& v : x) v *= 1.0 + 0.1 * s;
  } else if (op == "rotate2d") {
    if (x.size() < 2) return;
    const double a = 5.0 * s * std::numbers::pi / 180.0;
    const double x0 = x[0], x1 = x[1];
    x[0] = std::cos(a) * x0 - std::sin(a) * x1;
    x[1] = std::sin(a) * x0 + std::cos(a) * x1;
  } else if (op == "jitter") {
    if (s == 0.0) return;
    std::normal_distribution<double> g(0.0, 0.1 * std::abs(s));
    for (double& v : x) v += g(aux);
  } else if (op == "mask") {
    if (x.empty()) return;
    std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
    x[pick(aux)] *= 1.0 - 0.1 * std::abs(s);
  } else if (op == "translate") {
    if (x.empty()) return;
    std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
    x[pick(aux)] += 0.2 * s;
  } else {
    throw ConfigError("augmentation: unknown vector op '" + std::string(op) + "'");
  }
}

inline Matrix weak_augment(const Matrix& x, const SampleShape& shape, const WeakPolicy& policy, Rng& rng) {
  Matrix out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    if (shape.is_image()) {
      std::bernoulli_distribution coin(0.5);
      if (policy.flip && coin(rng)) flip_horizontal(row, shape);
      const long max_dx = static_cast<long>(std::floor(policy.max_translate_frac * static_cast<double>(shape.width)));
      const long max_dy = static_cast<long>(std::floor(policy.max_translate_frac * static_cast<double>(shape.height)));
      std::uniform_int_distribution<long> tx(-max_dx, max_dx), ty(-max_dy, max_dy);
      const long dx = tx(rng), dy = ty(rng);
      if (dx != 0 || dy != 0) translate_image(row, shape, dx, dy);
    } else if (policy.jitter_sigma > 0.0) {
      std::normal_distribution<double> g(0.0, policy.jitter_sigma);
      for (double& v : row) v += g(rng);
    }
  }
  return out;
}

// When `log` is non-null it receives the ops applied to every sample, which
// is enough to replay the transform with apply_op().
inline Matrix strong_augment(const Matrix& x, const SampleShape& shape, const AugPolicy& policy, Rng& rng,
                             AugLog* log = nullptr) {
  if (policy.magnitude < 0.0) throw ConfigError("augmentation: magnitude must be nonnegative");
  const auto ops = resolve_ops(policy, shape);
  Matrix out = x;
  if (log) log->assign(out.rows(), {});
  if (policy.n == 0) return out;
  std::uniform_int_distribution<std::size_t> pick(0, ops.size() - 1);
  std::uniform_real_distribution<double> mag(-policy.magnitude, policy.magnitude);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t k = 0; k < policy.n; ++k) {
      AppliedOp a{ops[pick(rng)], policy.magnitude > 0.0 ? mag(rng) : 0.0, rng()};
      apply_op(out.row(i), shape, a.op, a.magnitude, a.aux_seed);
      if (log) (*log)[i].push_back(std::move(a));
    }
  }
  return out;
}

}  // namespace featmatch
