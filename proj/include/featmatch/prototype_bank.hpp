#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "featmatch/error.hpp"
#include "featmatch/kmeans.hpp"
#include "featmatch/matrix.hpp"
#include "featmatch/prototype_set.hpp"

namespace featmatch {

// Bounded buffer of detached (feature, hard label) pairs. When full, the
// oldest entries are overwritten.
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(std::size_t capacity, std::size_t feature_dim)
      : capacity_(capacity), dim_(feature_dim), features_(capacity * feature_dim), labels_(capacity) {
    if (capacity == 0 || feature_dim == 0) throw ConfigError("MemoryBank: capacity and feature dim must be positive");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t feature_dim() const { return dim_; }
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }

  void record(const Matrix& features, std::span<const std::size_t> labels) {
    if (features.cols() != dim_) throw ConfigError("MemoryBank::record: feature width mismatch");
    if (features.rows() != labels.size()) throw ConfigError("MemoryBank::record: label count mismatch");
    for (std::size_t i = 0; i < features.rows(); ++i) {
      const std::size_t slot = (head_ + size_) % capacity_;
      std::copy(features.row(i).begin(), features.row(i).end(), features_.begin() + static_cast<std::ptrdiff_t>(slot * dim_));
      labels_[slot] = labels[i];
      if (size_ < capacity_) {
        ++size_;
      } else {
        head_ = (head_ + 1) % capacity_;
      }
    }
  }

  void clear() {
    head_ = 0;
    size_ = 0;
  }

  // Entries in insertion order, oldest first.
  Matrix features() const {
    Matrix out(size_, dim_);
    for (std::size_t i = 0; i < size_; ++i) {
      const std::size_t slot = (head_ + i) % capacity_;
      std::copy_n(features_.begin() + static_cast<std::ptrdiff_t>(slot * dim_), dim_, out.row(i).begin());
    }
    return out;
  }

  std::vector<std::size_t> labels() const {
    std::vector<std::size_t> out(size_);
    for (std::size_t i = 0; i < size_; ++i) out[i] = labels_[(head_ + i) % capacity_];
    return out;
  }

 private:
  std::size_t capacity_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> features_;
  std::vector<std::size_t> labels_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
};

// Per-class K-Means over the bank. Each class with n_c > 0 samples gets
// min(p_k, n_c) prototypes; classes with no samples keep the prototypes of
// `previous` (or stay empty on the first extraction).
inline PrototypeSet extract_prototypes(const MemoryBank& bank, const PrototypeSet& previous, std::size_t p_k,
                                       std::size_t num_classes, std::uint64_t seed, long epoch,
                                       KMeansOptions opt = {}) {
  if (bank.empty()) throw StateError("extract_prototypes: memory bank is empty");
  if (p_k == 0) throw ConfigError("extract_prototypes: p_k must be positive");
  const Matrix feats = bank.features();
  const auto labels = bank.labels();

  std::vector<std::vector<std::size_t>> members(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) throw ConfigError("extract_prototypes: label out of range");
    members[labels[i]].push_back(i);
  }

  PrototypeSet out;
  out.feature_dim = bank.feature_dim();
  out.epoch = epoch;
  out.by_class.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (members[c].empty()) {
      if (c < previous.by_class.size()) out.by_class[c] = previous.by_class[c];
      if (out.by_class[c].rows() == 0) out.by_class[c] = Matrix(0, out.feature_dim);
      continue;
    }
    const Matrix pts = feats.gather_rows(members[c]);
    const std::size_t k = std::min(p_k, pts.rows());
    out.by_class[c] = kmeans(pts, k, seed + c, opt).means;
  }
  return out;
}

// Installs the freshly extracted prototypes and empties the bank.
inline PrototypeSet swap_and_clear(MemoryBank& bank, PrototypeSet extracted) {
  bank.clear();
  return extracted;
}

}  // namespace featmatch
