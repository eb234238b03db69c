#pragma once

#include <cstddef>
#include <vector>

#include "featmatch/matrix.hpp"

namespace featmatch {

// Per-class prototype features. by_class[c] holds up to p_k rows of length
// d_f; a class with zero rows has never been observed.
struct PrototypeSet {
  std::vector<Matrix> by_class;
  std::size_t feature_dim = 0;
  long epoch = -1;  // epoch of the extraction that produced this set

  std::size_t num_classes() const { return by_class.size(); }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& m : by_class) n += m.rows();
    return n;
  }

  bool empty() const { return count() == 0; }

  // All prototypes stacked in class order, (count x feature_dim).
  Matrix stacked() const {
    Matrix out(count(), feature_dim);
    std::size_t r = 0;
    for (const auto& m : by_class) {
      for (std::size_t i = 0; i < m.rows(); ++i, ++r) {
        auto src = m.row(i);
        std::copy(src.begin(), src.end(), out.row(r).begin());
      }
    }
    return out;
  }

  friend bool operator==(const PrototypeSet& a, const PrototypeSet& b) {
    return a.by_class == b.by_class && a.feature_dim == b.feature_dim && a.epoch == b.epoch;
  }
};

}  // namespace featmatch
