#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "featmatch/error.hpp"
#include "featmatch/matrix.hpp"
#include "featmatch/rng.hpp"

namespace featmatch {

// Layout of one flattened sample. Images are channel-planar, row-major,
// values in [0, 1].
struct SampleShape {
  enum class Kind { Vector, Image };
  Kind kind = Kind::Vector;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::size_t vector_dim = 0;

  static SampleShape vector(std::size_t d) { return {Kind::Vector, 0, 0, 0, d}; }
  static SampleShape image(std::size_t h, std::size_t w, std::size_t c) { return {Kind::Image, h, w, c, 0}; }

  bool is_image() const { return kind == Kind::Image; }
  std::size_t dim() const { return is_image() ? height * width * channels : vector_dim; }
};

// Labeled samples (possibly from several domains).
struct Dataset {
  Matrix x;
  std::vector<std::size_t> y;
  std::vector<int> domain;  // 0 = target domain, 1 = shifted
  std::size_t num_classes = 0;
  SampleShape shape;

  std::size_t size() const { return x.rows(); }

  void validate() const {
    if (x.cols() != shape.dim()) throw ConfigError("Dataset: sample width does not match shape");
    if (y.size() != x.rows() || domain.size() != x.rows()) throw ConfigError("Dataset: label/domain count mismatch");
    for (std::size_t v : y) {
      if (v >= num_classes) throw ConfigError("Dataset: label out of range");
    }
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset out;
    out.x = x.gather_rows(idx);
    out.num_classes = num_classes;
    out.shape = shape;
    for (std::size_t i : idx) {
      out.y.push_back(y[i]);
      out.domain.push_back(domain[i]);
    }
    return out;
  }
};

using LabeledSet = Dataset;

class UnlabeledSet;
namespace diagnostics {
const std::vector<std::size_t>& hidden_labels(const UnlabeledSet& u);
}

// Unlabeled samples. The true labels are kept only for diagnostics and are
// reachable solely through diagnostics::hidden_labels().
class UnlabeledSet {
 public:
  UnlabeledSet() = default;
  explicit UnlabeledSet(Dataset ds) : hidden_(std::move(ds.y)) {
    x = std::move(ds.x);
    domain = std::move(ds.domain);
    num_classes = ds.num_classes;
    shape = ds.shape;
  }

  Matrix x;
  std::vector<int> domain;
  std::size_t num_classes = 0;
  SampleShape shape;

  std::size_t size() const { return x.rows(); }

  UnlabeledSet subset(std::span<const std::size_t> idx) const {
    Dataset d;
    d.x = x.gather_rows(idx);
    d.num_classes = num_classes;
    d.shape = shape;
    for (std::size_t i : idx) {
      d.y.push_back(hidden_[i]);
      d.domain.push_back(domain[i]);
    }
    return UnlabeledSet(std::move(d));
  }

 private:
  friend const std::vector<std::size_t>& diagnostics::hidden_labels(const UnlabeledSet& u);
  std::vector<std::size_t> hidden_;
};

namespace diagnostics {
inline const std::vector<std::size_t>& hidden_labels(const UnlabeledSet& u) { return u.hidden_; }
}  // namespace diagnostics

// ---------------------------------------------------------------------------
// Synthetic Gaussian blobs.

struct BlobSpec {
  std::size_t classes = 4;
  std::size_t per_class = 100;
  std::size_t dim = 2;
  double centroid_spread = 3.0;  // centroids in [-spread, spread]^dim, pairwise >= spread apart
  double noise_sigma = 0.5;
  std::uint64_t seed = 0;
};

// Simulated domain shift: rotation of the first two coordinates about the
// origin, then translation, with the noise inflated by noise_scale.
struct DomainShift {
  double rotation_deg = 45.0;
  double translation = 0.0;
  double noise_scale = 1.5;
};

struct BlobData {
  Dataset data;
  Matrix centroids;  // classes x dim
};

inline Matrix blob_centroids(const BlobSpec& spec) {
  Rng rng = make_stream(spec.seed, streams::kData, 0);
  std::uniform_real_distribution<double> u(-spec.centroid_spread, spec.centroid_spread);
  Matrix c(spec.classes, spec.dim);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    for (double& v : c.data()) v = u(rng);
    bool ok = true;
    for (std::size_t a = 0; a < spec.classes && ok; ++a) {
      for (std::size_t b = a + 1; b < spec.classes && ok; ++b) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < spec.dim; ++j) d2 += (c(a, j) - c(b, j)) * (c(a, j) - c(b, j));
        ok = std::sqrt(d2) >= spec.centroid_spread;
      }
    }
    if (ok) break;
  }
  return c;
}

// `stream` selects an independent draw of samples around the same centroids
// (e.g. train vs test); `shift` produces the shifted-domain variant.
inline BlobData make_blobs(const BlobSpec& spec, std::uint64_t stream = 0, const DomainShift* shift = nullptr) {
  if (spec.classes < 2) throw ConfigError("make_blobs: need at least two classes");
  if (spec.dim == 0) throw ConfigError("make_blobs: dim must be positive");
  BlobData out;
  out.centroids = blob_centroids(spec);
  Rng rng = make_stream(spec.seed, streams::kData, 1 + stream * 2 + (shift ? 1 : 0));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double sigma = spec.noise_sigma * (shift ? shift->noise_scale : 1.0);
  const double angle = shift ? shift->rotation_deg * std::numbers::pi / 180.0 : 0.0;

  Dataset& ds = out.data;
  ds.num_classes = spec.classes;
  ds.shape = SampleShape::vector(spec.dim);
  ds.x = Matrix(spec.classes * spec.per_class, spec.dim);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      auto row = ds.x.row(c * spec.per_class + i);
      for (std::size_t j = 0; j < spec.dim; ++j) row[j] = out.centroids(c, j) + sigma * gauss(rng);
      if (shift) {
        if (spec.dim >= 2) {
          const double x0 = row[0], x1 = row[1];
          row[0] = std::cos(angle) * x0 - std::sin(angle) * x1;
          row[1] = std::sin(angle) * x0 + std::cos(angle) * x1;
        }
        for (double& v : row) v += shift->translation;
      }
      ds.y.push_back(c);
      ds.domain.push_back(shift ? 1 : 0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary image records: 1 label byte followed by H*W*C pixel bytes
// (channel-planar, row-major), repeated.

struct ImageLayout {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  std::size_t num_classes = 10;

  std::size_t record_size() const { return 1 + height * width * channels; }
};

inline Dataset load_binary_images(const std::filesystem::path& path, const ImageLayout& layout) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image file '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t rec = layout.record_size();
  if (bytes.size() % rec != 0) {
    throw FormatError("image file '" + path.string() + "': size " + std::to_string(bytes.size()) +
                      " is not a multiple of the record size " + std::to_string(rec));
  }
  const std::size_t n = bytes.size() / rec;
  Dataset ds;
  ds.num_classes = layout.num_classes;
  ds.shape = SampleShape::image(layout.height, layout.width, layout.channels);
  ds.x = Matrix(n, rec - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* r = bytes.data() + i * rec;
    if (r[0] >= layout.num_classes) {
      throw FormatError("image file '" + path.string() + "': record " + std::to_string(i) + " has label " +
                        std::to_string(r[0]) + " >= " + std::to_string(layout.num_classes));
    }
    ds.y.push_back(r[0]);
    ds.domain.push_back(0);
    auto row = ds.x.row(i);
    for (std::size_t j = 0; j + 1 < rec; ++j) row[j] = static_cast<double>(r[j + 1]) / 255.0;
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Splits.

inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

// Class-balanced labeled subset of n_labels samples; the rest becomes the
// unlabeled set with its labels hidden.
inline std::pair<LabeledSet, UnlabeledSet> split_labeled(const Dataset& ds, std::size_t n_labels, std::uint64_t seed) {
  if (n_labels > ds.size()) throw ConfigError("split_labeled: more labels requested than samples");
  if (ds.num_classes == 0 || n_labels % ds.num_classes != 0) {
    throw ConfigError("split_labeled: n_labels=" + std::to_string(n_labels) + " not divisible by " +
                      std::to_string(ds.num_classes) + " classes");
  }
  const std::size_t per_class = n_labels / ds.num_classes;
  Rng rng = make_stream(seed, streams::kSplit);
  const auto order = shuffled_indices(ds.size(), rng);
  std::vector<std::size_t> taken(ds.num_classes, 0);
  std::vector<char> is_labeled(ds.size(), 0);
  for (std::size_t i : order) {
    if (taken[ds.y[i]] < per_class) {
      ++taken[ds.y[i]];
      is_labeled[i] = 1;
    }
  }
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    if (taken[c] < per_class) throw ConfigError("split_labeled: class " + std::to_string(c) + " has too few samples");
  }
  std::vector<std::size_t> lab, unl;
  for (std::size_t i = 0; i < ds.size(); ++i) (is_labeled[i] ? lab : unl).push_back(i);
  return {ds.subset(lab), UnlabeledSet(ds.subset(unl))};
}

// Random holdout of round(fraction * N) samples (e.g. for validation).
inline std::pair<Dataset, Dataset> split_holdout(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction >= 1.0) throw ConfigError("split_holdout: fraction must be in [0, 1)");
  Rng rng = make_stream(seed, streams::kSplit, 1);
  auto order = shuffled_indices(ds.size(), rng);
  const auto n_hold = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ds.size())));
  std::vector<std::size_t> hold(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_hold));
  std::vector<std::size_t> keep(order.begin() + static_cast<std::ptrdiff_t>(n_hold), order.end());
  std::sort(hold.begin(), hold.end());
  std::sort(keep.begin(), keep.end());
  return {ds.subset(keep), ds.subset(hold)};
}

// Replaces round(r_u * N) samples of the target unlabeled set with samples
// drawn uniformly (without replacement) from the shifted pool; the output
// keeps exactly N samples.
inline UnlabeledSet mix_domains(const UnlabeledSet& target, const UnlabeledSet& shifted, double r_u, std::uint64_t seed) {
  if (!(r_u >= 0.0 && r_u <= 1.0)) throw ConfigError("mix_domains: r_u must be in [0, 1]");
  const std::size_t n = target.size();
  const auto n_replace = static_cast<std::size_t>(std::llround(r_u * static_cast<double>(n)));
  if (shifted.size() < n_replace) {
    throw ConfigError("mix_domains: shifted pool has " + std::to_string(shifted.size()) + " samples, need " +
                      std::to_string(n_replace));
  }
  if (n_replace > 0 && shifted.x.cols() != target.x.cols()) throw ConfigError("mix_domains: sample width mismatch");
  Rng rng = make_stream(seed, streams::kMix);
  auto drop_order = shuffled_indices(n, rng);
  std::vector<char> dropped(n, 0);
  for (std::size_t i = 0; i < n_replace; ++i) dropped[drop_order[i]] = 1;
  auto pick_order = shuffled_indices(shifted.size(), rng);

  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < n; ++i) {
    if (!dropped[i]) keep.push_back(i);
  }
  std::vector<std::size_t> pick(pick_order.begin(), pick_order.begin() + static_cast<std::ptrdiff_t>(n_replace));

  const UnlabeledSet a = target.subset(keep);
  const UnlabeledSet b = shifted.subset(pick);
  Dataset merged;
  merged.num_classes = target.num_classes;
  merged.shape = target.shape;
  merged.x = Matrix(n, target.x.cols());
  std::size_t r = 0;
  for (const UnlabeledSet* part : {&a, &b}) {
    const auto& hidden = diagnostics::hidden_labels(*part);
    for (std::size_t i = 0; i < part->size(); ++i, ++r) {
      std::copy(part->x.row(i).begin(), part->x.row(i).end(), merged.x.row(r).begin());
      merged.y.push_back(hidden[i]);
      merged.domain.push_back(part->domain[i]);
    }
  }
  return UnlabeledSet(std::move(merged));
}

// ---------------------------------------------------------------------------
// Batching.

// Per-epoch seeded shuffle; every sample appears exactly once per epoch
// (minus the tail when drop_last is set).
class EpochBatcher {
 public:
  EpochBatcher(std::size_t n, std::size_t batch_size, std::uint64_t seed, bool drop_last)
      : n_(n), batch_(batch_size), seed_(seed), drop_last_(drop_last) {
    if (batch_size == 0) throw ConfigError("EpochBatcher: batch size must be positive");
  }

  std::size_t batches_per_epoch() const { return drop_last_ ? n_ / batch_ : (n_ + batch_ - 1) / batch_; }

  std::vector<std::vector<std::size_t>> epoch(std::uint64_t e) const {
    Rng rng = make_stream(seed_, streams::kUnlabeledShuffle, e);
    const auto order = shuffled_indices(n_, rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t b = 0; b < batches_per_epoch(); ++b) {
      const std::size_t lo = b * batch_;
      const std::size_t hi = std::min(n_, lo + batch_);
      out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(lo), order.begin() + static_cast<std::ptrdiff_t>(hi));
    }
    return out;
  }

 private:
  std::size_t n_;
  std::size_t batch_;
  std::uint64_t seed_;
  bool drop_last_;
};

// Endless sampler over a small set: walks a shuffled permutation and
// reshuffles when exhausted, so batches larger than the set repeat samples.
class CyclicSampler {
 public:
  CyclicSampler() = default;
  CyclicSampler(std::size_t n, std::uint64_t seed) : n_(n), rng_(make_stream(seed, streams::kLabeledSampler)) {
    if (n == 0) throw ConfigError("CyclicSampler: empty set");
    reshuffle();
  }

  std::vector<std::size_t> next(std::size_t k) {
    std::vector<std::size_t> out;
    out.reserve(k);
    while (out.size() < k) {
      if (pos_ == perm_.size()) reshuffle();
      out.push_back(perm_[pos_++]);
    }
    return out;
  }

  std::string save_state() const {
    std::ostringstream os;
    os << n_ << ' ' << pos_ << ' ';
    for (std::size_t v : perm_) os << v << ' ';
    os << rng_;
    return os.str();
  }

  void load_state(const std::string& s) {
    std::istringstream is(s);
    is >> n_ >> pos_;
    perm_.assign(n_, 0);
    for (auto& v : perm_) is >> v;
    is >> rng_;
    if (!is) throw FormatError("CyclicSampler: corrupt state");
  }

 private:
  void reshuffle() {
    perm_.resize(n_);
    std::iota(perm_.begin(), perm_.end(), 0);
    std::shuffle(perm_.begin(), perm_.end(), rng_);
    pos_ = 0;
  }

  std::size_t n_ = 0;
  Rng rng_;
  std::vector<std::size_t> perm_;
  std::size_t pos_ = 0;
};

}  // namespace featmatch
