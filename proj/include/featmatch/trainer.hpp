#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "featmatch/autodiff.hpp"
#include "featmatch/config.hpp"
#include "featmatch/data.hpp"
#include "featmatch/evaluation.hpp"
#include "featmatch/image_augment.hpp"
#include "featmatch/losses.hpp"
#include "featmatch/network.hpp"
#include "featmatch/optimizer.hpp"
#include "featmatch/prototype_bank.hpp"
#include "featmatch/rng.hpp"
#include "featmatch/schedule.hpp"

namespace featmatch {

struct TrainData {
  LabeledSet labeled;
  UnlabeledSet unlabeled;
  Dataset test;
  std::optional<Dataset> validation;
};

// Augmented inputs for one iteration.
struct StepViews {
  Matrix labeled_weak;
  std::vector<std::size_t> labels;
  Matrix unlabeled_weak;
  Matrix unlabeled_strong;
};

struct LossBreakdown {
  double clf = 0.0;
  double con_g = 0.0;
  double con_f = 0.0;
  double total = 0.0;
};

struct StepMetrics {
  LossBreakdown loss;
  double lr = 0.0;
  double momentum = 0.0;
  bool augf_active = false;
  double pseudo_label_confidence = 0.0;  // mean max-probability of the targets
  std::size_t iteration = 0;             // index of the step just taken
};

// What a single step optimises.
struct StepSettings {
  LossWeights weights;
  AblationSwitches switches;
  bool bypass_augf = false;  // pre-training or AugF ablated: image-only consistency
};

struct StepResult {
  LossBreakdown loss;
  PseudoLabels targets;
  Matrix labeled_features;  // Enc(labeled weak view), detached
};

// Forward + backward for one iteration. Parameter gradients are written to
// Parameter::grad; nothing is updated. `prototypes` may be null only when the
// step does not use AugF.
inline StepResult compute_step_gradients(Network& net, const PrototypeSet* prototypes, const StepViews& v,
                                         const StepSettings& s) {
  const bool use_augf = !s.bypass_augf && s.switches.use_augf;
  if (use_augf && (!prototypes || prototypes->empty())) {
    throw StateError("train step: AugF is active but no prototypes have been extracted");
  }
  const PrototypeSet* protos = use_augf ? prototypes : nullptr;
  const Matrix stacked = protos ? protos->stacked() : Matrix();
  const Matrix* stacked_ptr = protos ? &stacked : nullptr;

  StepResult r;
  const bool want_g = use_augf && s.switches.use_con_g && s.weights.lambda_g != 0.0;
  const bool want_f = s.switches.use_con_f && s.weights.lambda_f != 0.0;
  const bool have_unlabeled = v.unlabeled_weak.rows() > 0;

  if (have_unlabeled) r.targets = pseudo_label(net, protos, v.unlabeled_weak);

  Tape t;
  Var f_l = encoder_forward(t, net.encoder, t.constant(v.labeled_weak));
  r.labeled_features = t.value(f_l);
  Var l_clf = losses::clf(t, net, v.labels, f_l, stacked_ptr);
  Var zero = t.constant(Matrix(1, 1, 0.0));
  Var l_g = zero, l_f = zero;
  if (have_unlabeled && (want_g || want_f)) {
    Var f_s = encoder_forward(t, net.encoder, t.constant(v.unlabeled_strong));
    if (want_g) l_g = losses::con_g(t, net, r.targets.probs, f_s, stacked);
    if (want_f) l_f = losses::con_f(t, net, r.targets.probs, f_s);
  }
  LossWeights w = s.weights;
  if (!want_g) w.lambda_g = 0.0;
  if (!want_f) w.lambda_f = 0.0;
  Var total = losses::total(l_clf, l_g, l_f, w);
  t.backward(total);

  r.loss = {t.value(l_clf)(0, 0), t.value(l_g)(0, 0), t.value(l_f)(0, 0), t.value(total)(0, 0)};
  return r;
}

struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t iter = 0;
  double lr = 0.0;
  double l_clf = 0.0;
  double l_con_g = 0.0;
  double l_con_f = 0.0;
  double test_error = 0.0;
  double pl_acc_augf = 0.0;
  double pl_acc_no_augf = 0.0;
};

using MetricsLog = std::vector<EpochMetrics>;

// Everything needed to continue training bit-identically.
struct TrainState {
  std::size_t iteration = 0;
  std::size_t epoch = 0;  // completed epochs
  Network net;
  NesterovSgd optimizer;
  MemoryBank bank;
  PrototypeSet prototypes;
  CyclicSampler labeled_sampler;
  std::size_t extractions = 0;
};

class Trainer {
 public:
  Trainer(ExperimentConfig cfg, TrainData data) : cfg_(std::move(cfg)), data_(std::move(data)) {
    cfg_.validate();
    if (data_.labeled.size() == 0) throw ConfigError("trainer: labeled set is empty");
    if (data_.unlabeled.size() == 0) throw ConfigError("trainer: unlabeled set is empty");
    ModelSpec spec = cfg_.model;
    spec.input_dim = data_.labeled.shape.dim();
    spec.num_classes = data_.labeled.num_classes;
    state_.net = Network(spec);
    state_.net.init(cfg_.seed);
    state_.optimizer = NesterovSgd(state_.net.parameters());
    state_.bank = MemoryBank(data_.unlabeled.size() + data_.labeled.size(), spec.feature_dim);
    state_.labeled_sampler = CyclicSampler(data_.labeled.size(), cfg_.seed);
    state_.prototypes.feature_dim = spec.feature_dim;

    iters_per_epoch_ = (data_.unlabeled.size() + cfg_.train.batch_unlabeled - 1) / cfg_.train.batch_unlabeled;
    schedule_.pretrain_iters = cfg_.train.pretrain_epochs * iters_per_epoch_;
    schedule_.cycle_iters = cfg_.train.cycle_epochs * iters_per_epoch_;
    schedule_.converge_iters = cfg_.train.converge_epochs * iters_per_epoch_;
    schedule_.lr_scale = cfg_.train.lr_scale;
  }

  const ExperimentConfig& config() const { return cfg_; }
  const TrainData& data() const { return data_; }
  TrainState& state() { return state_; }
  const TrainState& state() const { return state_; }
  const MetricsLog& metrics() const { return metrics_; }
  const ScheduleConfig& schedule() const { return schedule_; }
  std::size_t iters_per_epoch() const { return iters_per_epoch_; }
  std::size_t total_epochs() const {
    return cfg_.train.pretrain_epochs + 2 * cfg_.train.cycle_epochs + cfg_.train.converge_epochs;
  }

  bool in_pretraining() const { return state_.iteration < schedule_.pretrain_iters; }

  // True once the model has been trained with AugF, so evaluation uses it.
  bool augf_in_use() const {
    return cfg_.ablation.use_augf && !state_.prototypes.empty() && state_.iteration > schedule_.pretrain_iters;
  }

  StepViews make_views(std::span<const std::size_t> labeled_idx, std::span<const std::size_t> unlabeled_idx) const {
    StepViews v;
    const auto& shape = data_.labeled.shape;
    const std::uint64_t it = state_.iteration;
    const Matrix xl = data_.labeled.x.gather_rows(labeled_idx);
    const Matrix xu = data_.unlabeled.x.gather_rows(unlabeled_idx);
    for (std::size_t i : labeled_idx) v.labels.push_back(data_.labeled.y[i]);
    auto weak_l = [&] {
      Rng r = make_stream(cfg_.seed, streams::kWeakLabeled, it);
      return weak_augment(xl, shape, cfg_.train.weak, r);
    };
    auto weak_u = [&] {
      Rng r = make_stream(cfg_.seed, streams::kWeakUnlabeled, it);
      return weak_augment(xu, shape, cfg_.train.weak, r);
    };
    auto strong_u = [&] {
      Rng r = make_stream(cfg_.seed, streams::kStrongUnlabeled, it);
      return strong_augment(xu, shape, cfg_.augment, r);
    };
    if (cfg_.train.threads > 1) {
      auto a = std::async(std::launch::async, weak_l);
      auto b = std::async(std::launch::async, weak_u);
      v.unlabeled_strong = strong_u();
      v.labeled_weak = a.get();
      v.unlabeled_weak = b.get();
    } else {
      v.labeled_weak = weak_l();
      v.unlabeled_weak = weak_u();
      v.unlabeled_strong = strong_u();
    }
    return v;
  }

  StepSettings step_settings() const {
    return StepSettings{cfg_.train.weights, cfg_.ablation, in_pretraining() || !cfg_.ablation.use_augf};
  }

  // One optimisation step on explicit views; records the detached weak-view
  // features into the memory bank.
  StepMetrics train_step(const StepViews& views) {
    const StepSettings settings = step_settings();
    const ScheduleValue sched = lr_schedule(state_.iteration, schedule_);
    StepResult r = compute_step_gradients(state_.net, &state_.prototypes, views, settings);
    auto params = state_.net.parameters();
    state_.optimizer.step(params, sched.lr, sched.momentum, cfg_.train.weight_decay);

    state_.bank.record(r.labeled_features, views.labels);
    if (r.targets.probs.rows() > 0) state_.bank.record(r.targets.features, r.targets.hard);

    StepMetrics m;
    m.loss = r.loss;
    m.lr = sched.lr;
    m.momentum = sched.momentum;
    m.augf_active = !settings.bypass_augf;
    m.iteration = state_.iteration;
    if (r.targets.probs.rows() > 0) {
      double conf = 0.0;
      for (std::size_t i = 0; i < r.targets.probs.rows(); ++i) conf += r.targets.probs(i, r.targets.hard[i]);
      m.pseudo_label_confidence = conf / static_cast<double>(r.targets.probs.rows());
    }
    ++state_.iteration;
    if (cfg_.train.prototype_interval > 0 && state_.iteration % cfg_.train.prototype_interval == 0) {
      refresh_prototypes();
    }
    return m;
  }

  StepMetrics train_step(std::span<const std::size_t> labeled_idx, std::span<const std::size_t> unlabeled_idx) {
    return train_step(make_views(labeled_idx, unlabeled_idx));
  }

  void refresh_prototypes() {
    if (state_.bank.empty()) return;
    KMeansOptions opt{cfg_.train.kmeans_max_iter, cfg_.train.kmeans_restarts};
    const std::uint64_t seed = fnv1a64(std::to_string(cfg_.seed) + ":" + std::to_string(state_.extractions));
    PrototypeSet fresh = extract_prototypes(state_.bank, state_.prototypes, cfg_.train.prototypes_per_class,
                                            state_.net.num_classes(), seed, static_cast<long>(state_.epoch), opt);
    state_.prototypes = swap_and_clear(state_.bank, std::move(fresh));
    ++state_.extractions;
  }

  // Runs one pass over the unlabeled set and appends a metrics row.
  const EpochMetrics& run_epoch() {
    EpochBatcher batcher(data_.unlabeled.size(), cfg_.train.batch_unlabeled, cfg_.seed, false);
    const auto batches = batcher.epoch(state_.epoch);
    LossBreakdown sum;
    double last_lr = 0.0;
    for (const auto& ub : batches) {
      const auto lb = state_.labeled_sampler.next(cfg_.train.batch_labeled);
      StepMetrics m = train_step(lb, ub);
      sum.clf += m.loss.clf;
      sum.con_g += m.loss.con_g;
      sum.con_f += m.loss.con_f;
      last_lr = m.lr;
    }
    if (cfg_.train.prototype_interval == 0) refresh_prototypes();
    ++state_.epoch;

    const double n = static_cast<double>(std::max<std::size_t>(batches.size(), 1));
    EpochMetrics row;
    row.epoch = state_.epoch;
    row.iter = state_.iteration;
    row.lr = last_lr;
    row.l_clf = sum.clf / n;
    row.l_con_g = sum.con_g / n;
    row.l_con_f = sum.con_f / n;
    row.test_error = evaluate(state_.net, augf_in_use() ? &state_.prototypes : nullptr, data_.test).error;
    const PrototypeSet* protos = state_.prototypes.empty() ? nullptr : &state_.prototypes;
    row.pl_acc_augf = protos ? pseudo_label_accuracy(state_.net, protos, data_.unlabeled, true)
                             : std::numeric_limits<double>::quiet_NaN();
    row.pl_acc_no_augf = pseudo_label_accuracy(state_.net, protos, data_.unlabeled, false);
    metrics_.push_back(row);

    if (data_.validation && cfg_.select_best_val) {
      const double val = evaluate(state_.net, augf_in_use() ? &state_.prototypes : nullptr, *data_.validation).error;
      if (!best_ || val < best_val_error_) {
        best_val_error_ = val;
        best_ = Snapshot{state_.net, state_.prototypes, augf_in_use(), state_.epoch};
      }
    }
    return metrics_.back();
  }

  using EpochCallback = std::function<void(const Trainer&, const EpochMetrics&)>;

  // Trains the remaining epochs (pre-training, cycle and convergence stages).
  void fit(const EpochCallback& on_epoch = {}) {
    while (state_.epoch < total_epochs()) {
      const auto& row = run_epoch();
      if (on_epoch) on_epoch(*this, row);
    }
  }

  struct Snapshot {
    Network net;
    PrototypeSet prototypes;
    bool use_augf = false;
    std::size_t epoch = 0;
  };

  // Final model, or the best-validation snapshot when selection is enabled.
  Snapshot selected_model() const {
    if (best_) return *best_;
    return Snapshot{state_.net, state_.prototypes, augf_in_use(), state_.epoch};
  }

  void restore(TrainState s, MetricsLog m) {
    state_ = std::move(s);
    metrics_ = std::move(m);
  }

 private:
  ExperimentConfig cfg_;
  TrainData data_;
  TrainState state_;
  MetricsLog metrics_;
  ScheduleConfig schedule_;
  std::size_t iters_per_epoch_ = 0;
  std::optional<Snapshot> best_;
  double best_val_error_ = std::numeric_limits<double>::infinity();
};

}  // namespace featmatch
