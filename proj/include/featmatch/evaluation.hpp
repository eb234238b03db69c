#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "featmatch/data.hpp"
#include "featmatch/error.hpp"
#include "featmatch/matrix.hpp"
#include "featmatch/network.hpp"
#include "featmatch/prototype_set.hpp"

namespace featmatch {

// 1 - (correct argmax / N).
inline double error_rate(const Matrix& probs, std::span<const std::size_t> labels) {
  if (probs.rows() == 0) throw ConfigError("error_rate: empty set");
  if (probs.rows() != labels.size()) throw ConfigError("error_rate: label count mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.rows(); ++i) correct += argmax(probs.row(i)) == labels[i];
  return 1.0 - static_cast<double>(correct) / static_cast<double>(probs.rows());
}

struct EvalResult {
  double error = 0.0;           // through AugF when prototypes are given
  double error_no_augf = 0.0;   // Clf(Enc(x))
  std::size_t samples = 0;
};

inline EvalResult evaluate(const Network& net, const PrototypeSet* prototypes, const Dataset& test) {
  if (test.size() == 0) throw ConfigError("evaluate: empty test set");
  const Matrix plain = predict(net, test.x, nullptr);
  EvalResult r;
  r.samples = test.size();
  r.error_no_augf = error_rate(plain, test.y);
  r.error = (prototypes && !prototypes->empty()) ? error_rate(predict(net, test.x, prototypes), test.y)
                                                 : r.error_no_augf;
  return r;
}

// Fraction of argmax pseudo-labels that match the hidden truth, with or
// without AugF refinement. Diagnostic only.
inline double pseudo_label_accuracy(const Network& net, const PrototypeSet* prototypes, const UnlabeledSet& u,
                                    bool use_augf) {
  if (u.size() == 0) throw ConfigError("pseudo_label_accuracy: empty set");
  if (use_augf && (!prototypes || prototypes->empty())) {
    throw StateError("pseudo_label_accuracy: AugF requested without prototypes");
  }
  const Matrix probs = predict(net, u.x, use_augf ? prototypes : nullptr);
  return 1.0 - error_rate(probs, diagnostics::hidden_labels(u));
}

}  // namespace featmatch
