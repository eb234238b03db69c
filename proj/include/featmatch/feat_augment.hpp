#pragma once

// Feature refinement / augmentation by attention over class prototypes.
//
//   e_x   = embed(f_x),  e_p,i = embed(f_p,i)            (shared linear map)
//   w^h   = softmax_i(e_x^h . e_p,i^h)                    per head h
//   m^h   = sum_i w_i^h e_p,i^h ;  m = [m^1, ..., m^H]
//   f_a   = relu(attend([e_x, m]))
//   g_x   = relu(f_x + refine(f_a))
//
// Prototypes enter the tape as constants, so no gradient reaches them; the
// embedding map still receives gradient through the prototype branch.

#include <atomic>
#include <cstddef>
#include <string>
#include <vector>

#include "featmatch/autodiff.hpp"
#include "featmatch/error.hpp"
#include "featmatch/matrix.hpp"
#include "featmatch/model.hpp"
#include "featmatch/prototype_set.hpp"

namespace featmatch {

struct AugFParams {
  DenseLayer embed;   // d_f -> d_e, linear
  DenseLayer attend;  // 2*d_e -> d_f, followed by relu
  DenseLayer refine;  // d_f -> d_f, residual branch
  std::size_t heads = 1;

  AugFParams() = default;
  AugFParams(std::size_t d_feat, std::size_t d_embed, std::size_t num_heads)
      : embed("augf.embed", d_feat, d_embed),
        attend("augf.attend", 2 * d_embed, d_feat),
        refine("augf.refine", d_feat, d_feat),
        heads(num_heads) {
    validate();
  }

  std::size_t feature_dim() const { return embed.in_dim(); }
  std::size_t embed_dim() const { return embed.out_dim(); }

  void validate() const {
    if (heads == 0) throw ConfigError("AugF: head count must be positive");
    if (embed_dim() == 0 || embed_dim() % heads != 0) {
      throw ConfigError("AugF: embedding dim " + std::to_string(embed_dim()) + " not divisible by " +
                        std::to_string(heads) + " heads");
    }
    if (attend.in_dim() != 2 * embed_dim() || attend.out_dim() != feature_dim() ||
        refine.in_dim() != feature_dim() || refine.out_dim() != feature_dim()) {
      throw ConfigError("AugF: inconsistent layer shapes");
    }
  }

  void set_zero() {
    embed.set_zero();
    attend.set_zero();
    refine.set_zero();
  }
};

// Number of full AugF evaluations performed in this process. Used to verify
// that stages which must bypass the module never touch it.
inline std::atomic<std::size_t>& augf_call_counter() {
  static std::atomic<std::size_t> counter{0};
  return counter;
}

namespace augf {

inline Var embed(Tape& t, AugFParams& p, Var f) {
  if (t.value(f).cols() != p.feature_dim()) {
    throw ConfigError("AugF embed: input width " + std::to_string(t.value(f).cols()) + ", expected " +
                      std::to_string(p.feature_dim()));
  }
  return p.embed.apply(t, f);
}

// Per-head attention weights, each (batch x num_prototypes), softmax taken
// jointly over every prototype of every class. Raw dot products, no scaling.
inline std::vector<Var> attend(Var e_x, Var e_p, std::size_t heads) {
  Tape& t = *e_x.tape;
  const std::size_t d_e = t.value(e_x).cols();
  if (t.value(e_p).rows() == 0) throw StateError("AugF attend: no prototypes available");
  if (t.value(e_p).cols() != d_e) throw ConfigError("AugF attend: prototype embedding width mismatch");
  if (heads == 0 || d_e % heads != 0) throw ConfigError("AugF attend: embedding not divisible into heads");
  const std::size_t w = d_e / heads;
  std::vector<Var> out;
  out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var q = ops::slice_cols(e_x, h * w, w);
    Var k = ops::slice_cols(e_p, h * w, w);
    out.push_back(ops::softmax_rows(ops::matmul_nt(q, k)));
  }
  return out;
}

// f_a = relu(attend([e_x, m])) with m the per-head weighted prototype sums.
inline Var aggregate(AugFParams& p, Var e_x, const std::vector<Var>& weights, Var e_p) {
  Tape& t = *e_x.tape;
  const std::size_t d_e = t.value(e_x).cols();
  if (weights.empty() || d_e % weights.size() != 0) throw ConfigError("AugF aggregate: bad head count");
  const std::size_t w = d_e / weights.size();
  std::vector<Var> heads;
  heads.reserve(weights.size());
  for (std::size_t h = 0; h < weights.size(); ++h) {
    if (t.value(weights[h]).cols() != t.value(e_p).rows()) {
      throw ConfigError("AugF aggregate: weights do not match prototype count");
    }
    heads.push_back(ops::matmul(weights[h], ops::slice_cols(e_p, h * w, w)));
  }
  Var m = ops::concat_cols(heads);
  return ops::relu(p.attend.apply(t, ops::concat_cols({e_x, m})));
}

inline Var refine(AugFParams& p, Var f_x, Var f_a) {
  Tape& t = *f_x.tape;
  if (t.value(f_x).cols() != p.feature_dim() || t.value(f_a).cols() != p.feature_dim()) {
    throw ConfigError("AugF refine: feature width mismatch");
  }
  return ops::relu(ops::add(f_x, p.refine.apply(t, f_a)));
}

// Full module: features (batch x d_f) and stacked prototypes (P x d_f).
inline Var forward(Tape& t, AugFParams& p, Var f_x, const Matrix& prototypes) {
  if (prototypes.rows() == 0) throw StateError("AugF: prototypes have not been extracted yet");
  if (prototypes.cols() != p.feature_dim()) throw ConfigError("AugF: prototype width mismatch");
  augf_call_counter().fetch_add(1, std::memory_order_relaxed);
  Var e_x = embed(t, p, f_x);
  Var e_p = embed(t, p, t.constant(prototypes));
  auto w = attend(e_x, e_p, p.heads);
  Var f_a = aggregate(p, e_x, w, e_p);
  return refine(p, f_x, f_a);
}

inline Var forward(Tape& t, AugFParams& p, Var f_x, const PrototypeSet& protos) {
  return forward(t, p, f_x, protos.stacked());
}

// Value-only wrappers (parameters are only read).
inline Matrix embed(const AugFParams& p, const Matrix& f) {
  Tape t;
  return t.value(embed(t, const_cast<AugFParams&>(p), t.constant(f)));
}

inline std::vector<Matrix> attention_weights(const Matrix& e_x, const Matrix& e_p, std::size_t heads) {
  Tape t;
  std::vector<Matrix> out;
  for (Var v : attend(t.constant(e_x), t.constant(e_p), heads)) out.push_back(t.value(v));
  return out;
}

inline Matrix aggregate(const AugFParams& p, const Matrix& e_x, const std::vector<Matrix>& weights,
                        const Matrix& e_p) {
  Tape t;
  std::vector<Var> w;
  for (const auto& m : weights) w.push_back(t.constant(m));
  return t.value(aggregate(const_cast<AugFParams&>(p), t.constant(e_x), w, t.constant(e_p)));
}

inline Matrix refine(const AugFParams& p, const Matrix& f_x, const Matrix& f_a) {
  Tape t;
  return t.value(refine(const_cast<AugFParams&>(p), t.constant(f_x), t.constant(f_a)));
}

inline Matrix forward(const AugFParams& p, const Matrix& f_x, const PrototypeSet& protos) {
  Tape t;
  return t.value(forward(t, const_cast<AugFParams&>(p), t.constant(f_x), protos));
}

}  // namespace augf
}  // namespace featmatch
