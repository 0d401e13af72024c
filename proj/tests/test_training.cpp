#include <gtest/gtest.h>

#include <numbers>

#include "atrpp/training.hpp"
#include "support.hpp"

namespace atrpp {
namespace {

using testing_support::random_tiny_case;

TEST(ClassWeights, HandFormula) {
  const auto cw = class_weights_from_counts({10, 30, 60});
  EXPECT_DOUBLE_EQ(cw.weights(0), 10.0 / 3.0);
  EXPECT_DOUBLE_EQ(cw.weights(1), 10.0 / 9.0);
  EXPECT_DOUBLE_EQ(cw.weights(2), 10.0 / 18.0);
  EXPECT_EQ(cw.total, 100u);
}

TEST(ClassWeights, BalancedAndEmptyClasses) {
  EXPECT_TRUE(class_weights_from_counts({7, 7, 7, 7}).weights.isOnes(0));
  const auto cw = class_weights_from_counts({0, 10});
  EXPECT_TRUE(cw.weights.allFinite());
  EXPECT_DOUBLE_EQ(cw.weights(0), 5.0);
}

TEST(ClassWeights, CountsPredictionTargets) {
  Record r;
  r.sequence = {{{0, 0.0}, {1, 1.0}, {1, 2.0}, {2, 3.0}}, 3};
  const std::vector<const Record*> ptrs{&r};
  const auto cw = class_weights(ptrs, 3);
  EXPECT_EQ(cw.counts, (std::vector<std::size_t>{0, 2, 1}));
}

// One prediction step whose target is perfectly predicted.
ForwardTrace perfect_trace(int z, int target, double gap) {
  ForwardTrace tr;
  tr.steps = 1;
  tr.log_probs = Eigen::MatrixXd::Constant(z, 1, -std::numeric_limits<double>::infinity());
  tr.log_probs(target, 0) = 0.0;
  tr.probs = tr.log_probs.array().exp();
  tr.scores = tr.log_probs;
  tr.time_output = Eigen::VectorXd::Constant(1, gap);
  return tr;
}

TEST(SequenceLoss, PerfectPredictionClosedForm) {
  ModelConfig mc;
  mc.num_dims = 2;
  Record r;
  r.sequence = {{{0, 0.0}, {1, 2.5}}, 2};
  const auto loss = sequence_loss(perfect_trace(2, 1, 2.5), r, Eigen::VectorXd::Ones(2), {1.0, 1.0}, mc);
  EXPECT_DOUBLE_EQ(loss.total, 0.5 * std::log(2 * std::numbers::pi));
  EXPECT_EQ(loss.class_term, 0.0);
  EXPECT_EQ(loss.clamped, 0u);
}

TEST(SequenceLoss, ClassWeightLinearityAndTimeTermRemoval) {
  auto tc = random_tiny_case(2, 4, 5, 7);
  const auto tr = forward(tc.record, tc.params, tc.config);
  const int z = tc.record.sequence.events.back().dim;
  Eigen::VectorXd only = Eigen::VectorXd::Zero(4);
  only(z) = 1.3;
  const auto a = sequence_loss(tr, tc.record, only, {}, tc.config);
  const auto b = sequence_loss(tr, tc.record, 2.0 * only, {}, tc.config);
  EXPECT_DOUBLE_EQ(b.class_term, 2.0 * a.class_term);
  EXPECT_EQ(a.time_term, b.time_term);

  const auto pure = sequence_loss(tr, tc.record, tc.class_weights, {1.0, 0.0}, tc.config);
  EXPECT_EQ(pure.time_term, 0.0);
  EXPECT_EQ(pure.total, pure.class_term);
}

TEST(SequenceLoss, ZeroProbabilityIsClamped) {
  ModelConfig mc;
  mc.num_dims = 2;
  Record r;
  r.sequence = {{{0, 0.0}, {0, 1.0}}, 2};
  const auto loss = sequence_loss(perfect_trace(2, 1, 1.0), r, Eigen::VectorXd::Ones(2), {}, mc);
  EXPECT_TRUE(std::isfinite(loss.total));
  EXPECT_EQ(loss.clamped, 1u);
  EXPECT_DOUBLE_EQ(loss.class_term, -std::log(kMinProbability));
}

TEST(SequenceLoss, FiniteOnExtremeModels) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto tc = random_tiny_case(seed, 5, 6, 10, 2, 40.0);
    const auto l = sequence_loss(forward(tc.record, tc.params, tc.config), tc.record, tc.class_weights, {},
                                 tc.config);
    EXPECT_TRUE(std::isfinite(l.total));
  }
}

TEST(Rmsprop, FirstStepByHand) {
  std::vector<double> theta{1.0}, grad{1.0}, s{0.0};
  rmsprop_update(theta, grad, s, {0.01, 0.9, 1e-8});
  EXPECT_DOUBLE_EQ(1.0 - theta[0], 0.01 * 1.0 / (std::sqrt(0.1) + 1e-8));
  EXPECT_DOUBLE_EQ(s[0], 0.1);
}

TEST(Rmsprop, ZeroGradientAndDeterminism) {
  auto tc = random_tiny_case(1, 3, 4, 5);
  auto p = tc.params;
  auto st = make_optimizer_state(p);
  rmsprop_step(p, zeros_like(p), st, {});
  EXPECT_EQ(tensors(p)[0].data[0], tensors(tc.params)[0].data[0]);
  EXPECT_EQ(global_norm(st.mean_square), 0.0);

  const auto g = loss_and_gradient(tc.record, tc.params, tc.config, tc.class_weights, {}).grad;
  auto p1 = tc.params, p2 = tc.params;
  auto s1 = make_optimizer_state(p1), s2 = s1;
  rmsprop_step(p1, g, s1, {});
  rmsprop_step(p2, g, s2, {});
  EXPECT_EQ(p1.embedding, p2.embedding);
  EXPECT_EQ(p1.event_lstm.U_c, p2.event_lstm.U_c);
}

TEST(Rmsprop, StepNormBound) {
  auto tc = random_tiny_case(4, 3, 4, 5);
  const auto g = loss_and_gradient(tc.record, tc.params, tc.config, tc.class_weights, {}).grad;
  for (double lr : {1e-2, 1e-6, 1e-12}) {
    auto p = tc.params;
    auto st = make_optimizer_state(p);
    const RmspropConfig c{lr, 0.9, 1e-8};
    rmsprop_step(p, g, st, c);
    // the stored parameter is rounded to its own ulp, so allow that much per entry
    double step_sq = 0, bound_sq = 0, round_sq = 0;
    const auto a = tensors(std::as_const(p));
    const auto b = tensors(tc.params);
    const auto gs = tensors(g);
    const auto ss = tensors(std::as_const(st.mean_square));
    for (std::size_t t = 0; t < a.size(); ++t)
      for (std::size_t k = 0; k < a[t].data.size(); ++k) {
        const double d = a[t].data[k] - b[t].data[k];
        const double u = gs[t].data[k] / (std::sqrt(ss[t].data[k]) + c.eps);
        const double ulp = std::nextafter(std::abs(a[t].data[k]), 1.0 / 0.0) - std::abs(a[t].data[k]);
        step_sq += d * d;
        bound_sq += u * u;
        round_sq += ulp * ulp;
      }
    EXPECT_LE(std::sqrt(step_sq), lr * std::sqrt(bound_sq) + std::sqrt(round_sq));
  }
}

TEST(Clip, GlobalNorm) {
  auto tc = random_tiny_case(4, 3, 4, 5);
  auto g = loss_and_gradient(tc.record, tc.params, tc.config, tc.class_weights, {}).grad;
  const double before = clip_global_norm(g, 1e-3);
  EXPECT_GT(before, 1e-3);
  EXPECT_NEAR(global_norm(g), 1e-3, 1e-15);
}

TEST(TotalGradient, EqualsHandSumOfTwoRecords) {
  auto a = random_tiny_case(3, 4, 5, 6);
  auto b = random_tiny_case(4, 4, 5, 8);
  const std::vector<const Record*> both{&a.record, &b.record};
  const auto total = total_gradient(both, a.params, a.config, a.class_weights, {});
  const auto ga = loss_and_gradient(a.record, a.params, a.config, a.class_weights, {});
  const auto gb = loss_and_gradient(b.record, a.params, a.config, a.class_weights, {});
  EXPECT_DOUBLE_EQ(total.loss.total, ga.loss.total + gb.loss.total);
  const auto t = tensors(total.grad), x = tensors(ga.grad), y = tensors(gb.grad);
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t k = 0; k < t[i].data.size(); ++k) EXPECT_EQ(t[i].data[k], x[i].data[k] + y[i].data[k]);
}

TEST(EarlyStopping, PatienceOneStopsAfterFirstRise) {
  EarlyStopping es(1);
  EXPECT_TRUE(es.update(1, 3.0));
  EXPECT_FALSE(es.should_stop());
  EXPECT_TRUE(es.update(2, 2.0));
  EXPECT_FALSE(es.should_stop());
  EXPECT_FALSE(es.update(3, 2.5));
  EXPECT_TRUE(es.should_stop());
  EXPECT_EQ(es.best_epoch(), 2);
  EXPECT_EQ(es.best(), 2.0);
}

Dataset one_record_dataset(const Record& r) {
  Dataset d;
  d.records = {r};
  d.num_dims = r.sequence.num_dims;
  d.num_features = r.series ? static_cast<int>(r.series->width()) : 0;
  d.train = d.validation = d.test = {0};
  return d;
}

TrainConfig small_train_config(int epochs) {
  TrainConfig tc;
  tc.max_epochs = epochs;
  tc.patience = 100;
  tc.rmsprop.lr = 5e-3;
  tc.seed = 3;
  return tc;
}

TEST(Train, OneRecordLossDecreases) {
  auto tiny = random_tiny_case(5, 3, 4, 8);
  const auto data = one_record_dataset(tiny.record);
  const auto tc = small_train_config(3);
  auto mc = tiny.config;
  mc.time_scale = 0.0;
  const auto b = class_weights(data.split(Split::train), 3).weights;

  // loss at the start and after each epoch, via resume
  std::vector<double> losses;
  auto first = train(data, mc, small_train_config(1));
  const auto train_ptrs = data.split(Split::train);
  losses.push_back(mean_loss(train_ptrs, init_params(first.config, tc.seed, tc.init_scale), first.config, b,
                             tc.loss, 1));
  losses.push_back(mean_loss(train_ptrs, first.state.params, first.config, b, tc.loss, 1));
  auto state = first.state;
  for (int e = 2; e <= 3; ++e) {
    auto next = train(data, first.config, small_train_config(e), state);
    state = next.state;
    losses.push_back(mean_loss(train_ptrs, state.params, first.config, b, tc.loss, 1));
  }
  int nonincreasing = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) nonincreasing += losses[i] <= losses[i - 1] + 1e-6;
  EXPECT_GE(nonincreasing, 2) << losses[0] << " " << losses[1] << " " << losses[2] << " " << losses[3];
}

TEST(Train, DeterministicGivenSeed) {
  auto tiny = random_tiny_case(6, 3, 4, 8);
  const auto data = one_record_dataset(tiny.record);
  const auto a = train(data, tiny.config, small_train_config(2));
  const auto b = train(data, tiny.config, small_train_config(2));
  const auto ta = tensors(a.params), tb = tensors(b.params);
  for (std::size_t i = 0; i < ta.size(); ++i)
    EXPECT_TRUE(std::equal(ta[i].data.begin(), ta[i].data.end(), tb[i].data.begin())) << ta[i].name;
}

TEST(Train, ResumeContinuesEpochCounterAndMatchesUninterrupted) {
  auto tiny = random_tiny_case(7, 3, 4, 9);
  Dataset data;
  for (std::uint64_t s = 0; s < 4; ++s) {
    auto r = random_tiny_case(20 + s, 3, 4, 9).record;
    data.records.push_back(r);
  }
  data.num_dims = 3;
  data.num_features = 2;
  data.train = {0, 1, 2};
  data.validation = {3};
  const auto full = train(data, tiny.config, small_train_config(4));
  const auto half = train(data, tiny.config, small_train_config(2));
  const auto rest = train(data, tiny.config, small_train_config(4), half.state);
  ASSERT_EQ(rest.log.size(), 2u);
  EXPECT_EQ(rest.log[0].epoch, 3);
  EXPECT_EQ(rest.log[1].epoch, 4);
  EXPECT_EQ(rest.log[1].val_loss, full.log[3].val_loss);
  EXPECT_EQ(rest.state.params.attention, full.state.params.attention);
}

TEST(Train, ReturnsBestValidationParams) {
  Dataset data;
  for (std::uint64_t s = 0; s < 6; ++s) data.records.push_back(random_tiny_case(30 + s, 3, 4, 7).record);
  data.num_dims = 3;
  data.num_features = 2;
  data.train = {0, 1, 2, 3};
  data.validation = {4, 5};
  auto tc = small_train_config(6);
  tc.rmsprop.lr = 0.05;  // large enough that validation loss wanders
  tc.patience = 2;
  const auto mc = random_tiny_case(1, 3, 4, 2).config;
  const auto res = train(data, mc, tc);
  double best = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  for (const auto& l : res.log)
    if (l.val_loss < best) {
      best = l.val_loss;
      best_epoch = l.epoch;
    }
  EXPECT_EQ(res.state.best_epoch, best_epoch);
  const auto val = data.split(Split::validation);
  EXPECT_EQ(mean_loss(val, res.params, res.config, res.weights.weights, tc.loss, 1), best);
  if (res.stopped_early) {
    EXPECT_EQ(res.state.since_best, tc.patience);
  }
}

TEST(Train, NonFiniteLossNamesRecord) {
  auto tiny = random_tiny_case(8, 3, 4, 6);
  tiny.record.id = "culprit";
  const auto data = one_record_dataset(tiny.record);
  TrainingState st;
  st.params = tiny.params;
  st.params.time_bias = std::numeric_limits<double>::quiet_NaN();
  st.optimizer = make_optimizer_state(st.params);
  st.best_params = st.params;
  try {
    train(data, tiny.config, small_train_config(1), st);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("culprit"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace atrpp
