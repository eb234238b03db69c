#pragma once

// Pseudo-labels and the three training losses:
//
//   L_clf    = H(y,   Clf(AugF(Enc(x))))      labeled, weak view
//   L_con-g  = H(p_g, Clf(AugF(Enc(x^))))     unlabeled, strong view
//   L_con-f  = H(p_g, Clf(Enc(x^)))           unlabeled, strong view
//   total    = L_clf + lambda_g L_con-g + lambda_f L_con-f
//
// with p_g = Clf(AugF(Enc(x))) on the weak view, computed outside any tape so
// it is a constant target. H is cross-entropy with log clamped at 1e-12.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "featmatch/autodiff.hpp"
#include "featmatch/error.hpp"
#include "featmatch/matrix.hpp"
#include "featmatch/network.hpp"
#include "featmatch/prototype_set.hpp"

namespace featmatch {

struct LossWeights {
  double lambda_g = 0.5;
  double lambda_f = 2.0;
};

inline void require_distribution(std::span<const double> p, const char* what) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string(what) + ": entry is negative or not finite");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-6) throw ConfigError(std::string(what) + ": row does not sum to 1");
}

// H(t, q) = -sum_c t_c log(max(q_c, 1e-12)).
inline double divergence(std::span<const double> target, std::span<const double> pred) {
  if (target.size() != pred.size()) throw ConfigError("divergence: length mismatch");
  require_distribution(target, "divergence target");
  require_distribution(pred, "divergence prediction");
  double h = 0.0;
  for (std::size_t c = 0; c < target.size(); ++c) {
    if (target[c] != 0.0) h -= target[c] * std::log(std::max(pred[c], kProbFloor));
  }
  return h;
}

// Gradient-stopped pseudo-label batch.
struct PseudoLabels {
  Matrix probs;                   // B x C
  std::vector<std::size_t> hard;  // argmax per row
  Matrix features;                // Enc(x_weak), detached, for the memory bank
};

// p_g = Clf(AugF(Enc(x_weak))); with `prototypes` null the AugF step is
// skipped (p_f, used before prototypes exist).
inline PseudoLabels pseudo_label(const Network& net, const PrototypeSet* prototypes, const Matrix& x_weak) {
  if (prototypes && prototypes->empty()) throw StateError("pseudo_label: prototypes have not been extracted yet");
  PseudoLabels out;
  out.features = encoder_forward(net.encoder, x_weak);
  Matrix f = prototypes ? augf::forward(net.augf, out.features, *prototypes) : out.features;
  out.probs = classifier_forward(net.classifier, f);
  out.hard.resize(out.probs.rows());
  for (std::size_t i = 0; i < out.probs.rows(); ++i) out.hard[i] = argmax(out.probs.row(i));
  return out;
}

inline Matrix one_hot(std::span<const std::size_t> labels, std::size_t num_classes) {
  Matrix m(labels.size(), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw ConfigError("label " + std::to_string(labels[i]) + " out of range for " + std::to_string(num_classes) +
                        " classes");
    }
    m(i, labels[i]) = 1.0;
  }
  return m;
}

namespace losses {

inline void require_batch_match(const Matrix& target, const Tape& t, Var features, const char* what) {
  if (target.rows() != t.value(features).rows()) {
    throw ConfigError(std::string(what) + ": pseudo-label batch has " + std::to_string(target.rows()) +
                      " rows, strong view has " + std::to_string(t.value(features).rows()));
  }
}

// Mean H(target, Clf(AugF(f_strong))).
inline Var con_g(Tape& t, Network& net, const Matrix& target, Var f_strong, const Matrix& prototypes) {
  require_batch_match(target, t, f_strong, "loss_con_g");
  Var g = augf::forward(t, net.augf, f_strong, prototypes);
  return ops::cross_entropy(classifier_forward(t, net.classifier, g), target);
}

// Mean H(target, Clf(f_strong)).
inline Var con_f(Tape& t, Network& net, const Matrix& target, Var f_strong) {
  require_batch_match(target, t, f_strong, "loss_con_f");
  return ops::cross_entropy(classifier_forward(t, net.classifier, f_strong), target);
}

// Mean H(one_hot(y), Clf(AugF(f))) or Clf(f) when prototypes is null.
inline Var clf(Tape& t, Network& net, std::span<const std::size_t> labels, Var f, const Matrix* prototypes) {
  if (labels.size() != t.value(f).rows()) throw ConfigError("loss_clf: label count does not match batch");
  Var feat = prototypes ? augf::forward(t, net.augf, f, *prototypes) : f;
  return ops::cross_entropy(classifier_forward(t, net.classifier, feat), one_hot(labels, net.num_classes()));
}

inline Var total(Var l_clf, Var l_g, Var l_f, const LossWeights& w) {
  return ops::add(l_clf, ops::add(ops::scale(l_g, w.lambda_g), ops::scale(l_f, w.lambda_f)));
}

}  // namespace losses

// Value-level forms taking raw inputs.

inline double loss_con_g(const Network& net, const PrototypeSet& prototypes, const Matrix& p_g, const Matrix& x_strong) {
  Tape t;
  auto& n = const_cast<Network&>(net);
  Var f = encoder_forward(t, n.encoder, t.constant(x_strong));
  return t.value(losses::con_g(t, n, p_g, f, prototypes.stacked()))(0, 0);
}

inline double loss_con_f(const Network& net, const Matrix& p_g, const Matrix& x_strong) {
  Tape t;
  auto& n = const_cast<Network&>(net);
  Var f = encoder_forward(t, n.encoder, t.constant(x_strong));
  return t.value(losses::con_f(t, n, p_g, f))(0, 0);
}

inline double loss_clf(const Network& net, const PrototypeSet* prototypes, std::span<const std::size_t> labels,
                       const Matrix& x_weak) {
  Tape t;
  auto& n = const_cast<Network&>(net);
  Var f = encoder_forward(t, n.encoder, t.constant(x_weak));
  const Matrix stacked = prototypes ? prototypes->stacked() : Matrix();
  return t.value(losses::clf(t, n, labels, f, prototypes ? &stacked : nullptr))(0, 0);
}

inline double total_loss(double l_clf, double l_g, double l_f, const LossWeights& w) {
  return l_clf + w.lambda_g * l_g + w.lambda_f * l_f;
}

}  // namespace featmatch
