#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "featmatch/experiment.hpp"
#include "featmatch/trainer.hpp"
#include "test_util.hpp"

using namespace featmatch;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.seed = 3;
  c.dataset.classes = 3;
  c.dataset.train_per_class = 44;
  c.dataset.test_per_class = 20;
  c.dataset.n_labels = 12;
  c.model.hidden = {8};
  c.model.feature_dim = 6;
  c.model.embed_dim = 4;
  c.model.heads = 2;
  c.model.num_classes = 3;
  c.train.batch_labeled = 8;
  c.train.batch_unlabeled = 32;
  c.train.prototypes_per_class = 3;
  c.train.pretrain_epochs = 1;
  c.train.cycle_epochs = 1;
  c.train.converge_epochs = 1;
  return c;
}

std::vector<Matrix> param_values(const Network& n) {
  std::vector<Matrix> out;
  for (const auto* p : n.parameters()) out.push_back(p->value);
  return out;
}

std::vector<Matrix> param_grads(const Network& n) {
  std::vector<Matrix> out;
  for (const auto* p : n.parameters()) out.push_back(p->grad);
  return out;
}

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// A trainer moved past pre-training with prototypes available.
Trainer trainer_after_pretrain(ExperimentConfig c = small_config()) {
  Trainer t(c, prepare_data(c));
  for (std::size_t e = 0; e < c.train.pretrain_epochs; ++e) t.run_epoch();
  return t;
}

}  // namespace

TEST(Trainer, IterationsPerEpochAndStages) {
  const ExperimentConfig c = small_config();
  Trainer t(c, prepare_data(c));
  EXPECT_EQ(t.data().unlabeled.size(), 120u);
  EXPECT_EQ(t.iters_per_epoch(), 4u);  // ceil(120 / 32)
  EXPECT_EQ(t.schedule().pretrain_iters, 4u);
  EXPECT_EQ(t.total_epochs(), 4u);
  EXPECT_TRUE(t.in_pretraining());
  EXPECT_EQ(t.state().bank.capacity(), 132u);
}

TEST(Trainer, PretrainingNeverCallsAugF) {
  const ExperimentConfig c = small_config();
  Trainer t(c, prepare_data(c));
  EpochBatcher batcher(t.data().unlabeled.size(), c.train.batch_unlabeled, c.seed, false);
  const auto before = augf_call_counter().load();
  for (const auto& ub : batcher.epoch(0)) {
    ASSERT_TRUE(t.in_pretraining());
    const auto lb = t.state().labeled_sampler.next(c.train.batch_labeled);
    const StepMetrics m = t.train_step(lb, ub);
    EXPECT_FALSE(m.augf_active);
  }
  EXPECT_EQ(augf_call_counter().load(), before);
  EXPECT_FALSE(t.in_pretraining());
}

TEST(Trainer, MainStageUsesAugF) {
  Trainer t = trainer_after_pretrain();
  ASSERT_FALSE(t.state().prototypes.empty());
  const auto before = augf_call_counter().load();
  const StepMetrics m = t.train_step(t.state().labeled_sampler.next(8), iota_n(32));
  EXPECT_TRUE(m.augf_active);
  EXPECT_GT(augf_call_counter().load(), before);
  EXPECT_TRUE(std::isfinite(m.loss.total));
  EXPECT_GE(m.loss.clf, 0.0);
  EXPECT_GE(m.loss.con_g, 0.0);
  EXPECT_GE(m.loss.con_f, 0.0);
}

TEST(Trainer, TotalLossMatchesHandAssembly) {
  Trainer t = trainer_after_pretrain();
  const StepViews v = t.make_views(std::vector<std::size_t>{0, 1, 2, 3}, iota_n(6));
  Network& net = t.state().net;
  const PrototypeSet& ps = t.state().prototypes;
  const StepResult r = compute_step_gradients(net, &ps, v, t.step_settings());
  const Matrix p_g = pseudo_label(net, &ps, v.unlabeled_weak).probs;
  const double l_clf = loss_clf(net, &ps, v.labels, v.labeled_weak);
  const double l_g = loss_con_g(net, ps, p_g, v.unlabeled_strong);
  const double l_f = loss_con_f(net, p_g, v.unlabeled_strong);
  EXPECT_NEAR(r.loss.clf, l_clf, 1e-12);
  EXPECT_NEAR(r.loss.con_g, l_g, 1e-12);
  EXPECT_NEAR(r.loss.con_f, l_f, 1e-12);
  EXPECT_NEAR(r.loss.total, l_clf + 0.5 * l_g + 2.0 * l_f, 1e-12);
}

TEST(Trainer, ZeroConsistencyWeightsEqualSupervisedStep) {
  for (bool bypass : {true, false}) {
    Trainer t = trainer_after_pretrain();
    const StepViews v = t.make_views(std::vector<std::size_t>{0, 1, 2, 3, 4}, iota_n(10));
    Network& net = t.state().net;
    const PrototypeSet& ps = t.state().prototypes;
    StepSettings s = t.step_settings();
    s.weights = {0.0, 0.0};
    s.bypass_augf = bypass;
    const StepResult r = compute_step_gradients(net, &ps, v, s);
    const auto got = param_grads(net);

    Tape tape;
    const Matrix stacked = ps.stacked();
    Var f = encoder_forward(tape, net.encoder, tape.constant(v.labeled_weak));
    Var l = losses::clf(tape, net, v.labels, f, bypass ? nullptr : &stacked);
    tape.backward(l);
    EXPECT_EQ(param_grads(net), got) << "bypass=" << bypass;
    EXPECT_EQ(r.loss.total, tape.value(l)(0, 0));
  }
}

TEST(Trainer, GradientInvariantToBatchPermutation) {
  Trainer t = trainer_after_pretrain();
  const StepViews v = t.make_views(std::vector<std::size_t>{0, 1, 2, 3}, iota_n(8));
  StepViews p = v;
  const std::vector<std::size_t> lp{2, 0, 3, 1}, up{7, 3, 0, 5, 1, 6, 2, 4};
  p.labeled_weak = v.labeled_weak.gather_rows(lp);
  for (std::size_t i = 0; i < 4; ++i) p.labels[i] = v.labels[lp[i]];
  p.unlabeled_weak = v.unlabeled_weak.gather_rows(up);
  p.unlabeled_strong = v.unlabeled_strong.gather_rows(up);
  Network& net = t.state().net;
  const auto r1 = compute_step_gradients(net, &t.state().prototypes, v, t.step_settings());
  const auto g1 = param_grads(net);
  const auto r2 = compute_step_gradients(net, &t.state().prototypes, p, t.step_settings());
  const auto g2 = param_grads(net);
  EXPECT_NEAR(r1.loss.total, r2.loss.total, 1e-12);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_LT(fmtest::max_abs_diff(g1[i], g2[i]), 1e-12);
}

TEST(Trainer, StepLeavesPrototypesUntouched) {
  Trainer t = trainer_after_pretrain();
  const PrototypeSet before = t.state().prototypes;
  t.train_step(t.state().labeled_sampler.next(8), iota_n(32));
  EXPECT_EQ(t.state().prototypes, before);
}

TEST(Trainer, ExtractionOncePerEpoch) {
  const ExperimentConfig c = small_config();
  Trainer t(c, prepare_data(c));
  std::vector<long> epochs;
  t.fit([&](const Trainer& tr, const EpochMetrics&) { epochs.push_back(tr.state().prototypes.epoch); });
  EXPECT_EQ(t.state().extractions, t.total_epochs());
  EXPECT_EQ(epochs, (std::vector<long>{0, 1, 2, 3}));
  EXPECT_EQ(t.metrics().size(), 4u);
  EXPECT_EQ(t.state().iteration, 16u);
}

TEST(Trainer, ExtractionEveryIntervalIterations) {
  ExperimentConfig c = small_config();
  c.train.prototype_interval = 3;
  Trainer t(c, prepare_data(c));
  t.fit();
  EXPECT_EQ(t.state().extractions, 16u / 3u);
}

TEST(Trainer, BankHoldsLabeledAndUnlabeledRecords) {
  const ExperimentConfig c = small_config();
  Trainer t(c, prepare_data(c));
  t.train_step(t.state().labeled_sampler.next(8), iota_n(32));
  EXPECT_EQ(t.state().bank.size(), 40u);
}

TEST(Trainer, DeterministicAcrossRunsAndThreadCounts) {
  ExperimentConfig c = small_config();
  Trainer a(c, prepare_data(c));
  a.fit();
  c.train.threads = 4;
  Trainer b(c, prepare_data(c));
  b.fit();
  EXPECT_EQ(param_values(a.state().net), param_values(b.state().net));
  ASSERT_EQ(a.metrics().size(), b.metrics().size());
  for (std::size_t i = 0; i < a.metrics().size(); ++i) {
    EXPECT_EQ(a.metrics()[i].l_clf, b.metrics()[i].l_clf);
    EXPECT_EQ(a.metrics()[i].test_error, b.metrics()[i].test_error);
  }
}

TEST(Trainer, OnlyPretrainingWhenNoMainIterations) {
  ExperimentConfig c = small_config();
  c.train.cycle_epochs = 0;
  c.train.converge_epochs = 0;
  Trainer t(c, prepare_data(c));
  t.fit();
  EXPECT_EQ(t.state().epoch, 1u);
  EXPECT_FALSE(t.augf_in_use());
  EXPECT_FALSE(t.selected_model().use_augf);
}

TEST(Trainer, AugFWithoutPrototypesIsStateError) {
  const ExperimentConfig c = small_config();
  Trainer t(c, prepare_data(c));
  StepSettings s = t.step_settings();
  s.bypass_augf = false;
  const StepViews v = t.make_views(std::vector<std::size_t>{0}, iota_n(2));
  EXPECT_THROW(compute_step_gradients(t.state().net, &t.state().prototypes, v, s), StateError);
}

TEST(Trainer, BestValidationSelection) {
  ExperimentConfig c = small_config();
  c.dataset.val_fraction = 0.2;
  c.select_best_val = true;
  Trainer t(c, prepare_data(c));
  ASSERT_TRUE(t.data().validation.has_value());
  t.fit();
  const auto sel = t.selected_model();
  EXPECT_GE(sel.epoch, 1u);
  EXPECT_LE(sel.epoch, t.total_epochs());
}
