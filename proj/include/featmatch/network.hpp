#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "featmatch/autodiff.hpp"
#include "featmatch/feat_augment.hpp"
#include "featmatch/model.hpp"
#include "featmatch/prototype_set.hpp"
#include "featmatch/rng.hpp"

namespace featmatch {

struct ModelSpec {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden{32};
  std::size_t feature_dim = 16;
  std::size_t embed_dim = 16;
  std::size_t heads = 4;
  std::size_t num_classes = 4;
};

// Encoder, classifier and AugF module trained jointly.
struct Network {
  EncoderParams encoder;
  ClassifierParams classifier;
  AugFParams augf;

  Network() = default;
  explicit Network(const ModelSpec& s)
      : encoder(s.input_dim, s.hidden, s.feature_dim),
        classifier(s.feature_dim, s.num_classes),
        augf(s.feature_dim, s.embed_dim, s.heads) {}

  void init(std::uint64_t seed) {
    Rng rng = make_stream(seed, streams::kInit);
    for (auto& l : encoder.layers) l.init_uniform(rng);
    classifier.fc.init_uniform(rng);
    augf.embed.init_uniform(rng);
    augf.attend.init_uniform(rng);
    augf.refine.init_uniform(rng);
  }

  std::size_t num_classes() const { return classifier.num_classes(); }
  std::size_t feature_dim() const { return encoder.feature_dim(); }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& l : encoder.layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    for (DenseLayer* l : {&classifier.fc, &augf.embed, &augf.attend, &augf.refine}) {
      out.push_back(&l->weight);
      out.push_back(&l->bias);
    }
    return out;
  }

  std::vector<const Parameter*> parameters() const {
    auto all = const_cast<Network*>(this)->parameters();
    return {all.begin(), all.end()};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->size();
    return n;
  }
};

// Clf(AugF(Enc(x))) when prototypes are given, Clf(Enc(x)) otherwise.
inline Var predict(Tape& t, Network& net, Var x, const Matrix* prototypes) {
  Var f = encoder_forward(t, net.encoder, x);
  if (prototypes) f = augf::forward(t, net.augf, f, *prototypes);
  return classifier_forward(t, net.classifier, f);
}

inline Matrix predict(const Network& net, const Matrix& x, const PrototypeSet* prototypes) {
  Tape t;
  const Matrix stacked = prototypes ? prototypes->stacked() : Matrix();
  return t.value(predict(t, const_cast<Network&>(net), t.constant(x), prototypes ? &stacked : nullptr));
}

}  // namespace featmatch
