#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "featmatch/error.hpp"
#include "featmatch/matrix.hpp"
#include "featmatch/rng.hpp"

namespace featmatch {

struct KMeansOptions {
  std::size_t max_iter = 100;
  std::size_t restarts = 1;  // independent k-means++ initialisations, best kept
};

struct KMeansResult {
  Matrix means;                         // k x d
  std::vector<std::size_t> assignment;  // per point
  double objective = 0.0;               // sum of squared distances to assigned mean
  std::vector<double> trace;            // objective after every assignment step
  std::size_t iterations = 0;
};

namespace kmeans_detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

// Nearest mean; ties resolved toward the lowest index.
inline std::size_t nearest(std::span<const double> p, const Matrix& means, double* dist = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < means.rows(); ++c) {
    const double d = sq_dist(p, means.row(c));
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist) *dist = best_d;
  return best;
}

// Indices of the first occurrence of each distinct row; stops once more than
// `limit` have been found.
inline std::vector<std::size_t> distinct_rows(const Matrix& points, std::size_t limit) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < points.rows() && idx.size() <= limit; ++i) {
    bool seen = false;
    for (std::size_t j : idx) {
      if (std::equal(points.row(i).begin(), points.row(i).end(), points.row(j).begin())) {
        seen = true;
        break;
      }
    }
    if (!seen) idx.push_back(i);
  }
  return idx;
}

inline Matrix plus_plus_seed(const Matrix& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.rows();
  Matrix means(k, points.cols());
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t first = pick(rng);
  std::copy(points.row(first).begin(), points.row(first).end(), means.row(0).begin());
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(points.row(i), means.row(0));
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t chosen = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      chosen = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] == 0.0) continue;
        r -= d2[i];
        if (r < 0.0) {
          chosen = i;
          break;
        }
      }
      while (d2[chosen] == 0.0 && chosen > 0) --chosen;
    }
    std::copy(points.row(chosen).begin(), points.row(chosen).end(), means.row(c).begin());
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(points.row(i), means.row(c)));
  }
  return means;
}

inline double assign(const Matrix& points, const Matrix& means, std::vector<std::size_t>& assignment, bool& changed) {
  double obj = 0.0;
  changed = false;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    double d = 0.0;
    const std::size_t c = nearest(points.row(i), means, &d);
    if (c != assignment[i]) {
      assignment[i] = c;
      changed = true;
    }
    obj += d;
  }
  return obj;
}

// Empty clusters keep their previous mean.
inline void update(const Matrix& points, const std::vector<std::size_t>& assignment, Matrix& means) {
  Matrix sums(means.rows(), means.cols());
  std::vector<std::size_t> counts(means.rows(), 0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    auto s = sums.row(assignment[i]);
    auto p = points.row(i);
    for (std::size_t j = 0; j < p.size(); ++j) s[j] += p[j];
    ++counts[assignment[i]];
  }
  for (std::size_t c = 0; c < means.rows(); ++c) {
    if (counts[c] == 0) continue;
    for (std::size_t j = 0; j < means.cols(); ++j) means(c, j) = sums(c, j) / static_cast<double>(counts[c]);
  }
}

inline KMeansResult lloyd(const Matrix& points, Matrix means, std::size_t max_iter) {
  KMeansResult r;
  r.assignment.assign(points.rows(), std::numeric_limits<std::size_t>::max());
  bool changed = false;
  r.objective = assign(points, means, r.assignment, changed);
  r.trace.push_back(r.objective);
  for (std::size_t it = 0; it < max_iter; ++it) {
    update(points, r.assignment, means);
    r.objective = assign(points, means, r.assignment, changed);
    r.trace.push_back(r.objective);
    r.iterations = it + 1;
    if (!changed) break;
  }
  r.means = std::move(means);
  return r;
}

}  // namespace kmeans_detail

// Sum of squared distances from each point to its nearest mean.
inline double kmeans_objective(const Matrix& points, const Matrix& means) {
  double obj = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    double d = 0.0;
    kmeans_detail::nearest(points.row(i), means, &d);
    obj += d;
  }
  return obj;
}

// Lloyd's algorithm with k-means++ seeding. When k is at least the number of
// distinct points, the distinct points are returned (in first-seen order),
// padded by cycling through them until k means exist.
inline KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, KMeansOptions opt = {}) {
  if (points.rows() == 0) throw ConfigError("kmeans: no points");
  if (k == 0) throw ConfigError("kmeans: k must be at least 1");
  if (!points.all_finite()) throw ConfigError("kmeans: non-finite point");

  const auto distinct = kmeans_detail::distinct_rows(points, k);
  if (k >= distinct.size()) {
    KMeansResult r;
    r.means = Matrix(k, points.cols());
    for (std::size_t c = 0; c < k; ++c) {
      auto src = points.row(distinct[c % distinct.size()]);
      std::copy(src.begin(), src.end(), r.means.row(c).begin());
    }
    r.assignment.resize(points.rows());
    for (std::size_t i = 0; i < points.rows(); ++i) r.assignment[i] = kmeans_detail::nearest(points.row(i), r.means);
    r.objective = kmeans_objective(points, r.means);
    r.trace.push_back(r.objective);
    return r;
  }

  KMeansResult best;
  bool have = false;
  for (std::size_t restart = 0; restart < std::max<std::size_t>(opt.restarts, 1); ++restart) {
    Rng rng = make_stream(seed, streams::kKMeans, restart);
    auto r = kmeans_detail::lloyd(points, kmeans_detail::plus_plus_seed(points, k, rng), opt.max_iter);
    if (!have || r.objective < best.objective) {
      best = std::move(r);
      have = true;
    }
  }
  return best;
}

}  // namespace featmatch
