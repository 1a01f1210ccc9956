#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "pdon/datagen/dataset.hpp"
#include "pdon/forward/metrics.hpp"
#include "pdon/forward/train.hpp"
#include "pdon/models/surrogate.hpp"
#include "support.hpp"

using namespace pdon;
using namespace pdon::forward;
using diffcore::Matrix;
using models::Arch;

namespace {

const datagen::Dataset& train_set() {
  static const datagen::Dataset ds = [] {
    datagen::GenerateOptions o;
    o.case_id = datagen::CaseId::c1a;
    o.role = datagen::Role::train;
    o.n = 12;
    o.seed = 21;
    return datagen::generate_dataset(o);
  }();
  return ds;
}

models::NetworkSpec small_spec(Arch arch) {
  auto s = models::default_config(arch, models::Family::duffing);
  switch (arch) {
    case Arch::parametric_ld:
      s.branch = {200, 24, 12};
      s.param = {2, 24, 12};
      s.trunk = {20, 24, 12};
      break;
    case Arch::parametric_nd:
      s.branch = {200, 24, 12};
      s.param = {2, 24, 12};
      s.trunk = {20, 24, 12};
      s.decoder = {200, 16, 200};
      break;
    case Arch::vanilla:
      s.branch = {202, 24, 12};
      s.trunk = {1, 24, 12};
      break;
    case Arch::mlp:
      s.mlp = {202, 32, 200};
      break;
  }
  return s;
}

std::vector<std::vector<double>> snapshot(const models::Surrogate& m) {
  std::vector<std::vector<double>> out;
  for (const auto* n : m.networks()) out.emplace_back(n->weights().begin(), n->weights().end());
  return out;
}

TrainConfig config(std::size_t epochs, double lr, std::size_t batch = 5) {
  TrainConfig c;
  c.epochs = epochs;
  c.learning_rate = lr;
  c.batch_size = batch;
  c.seed = 8;
  return c;
}

}  // namespace

TEST(Nrmse, ClosedFormIdentities) {
  Rng rng(1);
  const Matrix y = pdon::testing::random_matrix(4, 9, rng);
  EXPECT_EQ(nrmse(y, y), 0.0);
  EXPECT_DOUBLE_EQ(nrmse(Matrix::Zero(4, 9), y), 1.0);
  EXPECT_DOUBLE_EQ(nrmse(2.0 * y, y), 1.0);
  EXPECT_NEAR(nrmse(1.1 * y, y), 0.1, 1e-14);
  for (double v : nrmse_per_sample(0.5 * y, y)) EXPECT_DOUBLE_EQ(v, 0.5);
  EXPECT_THROW(nrmse(y.leftCols(8), y), UserError);
  EXPECT_THROW(nrmse(y, Matrix::Zero(4, 9)), UserError);
}

TEST(Nrmse, EvaluationMatchesDirectRecomputation) {
  const auto model = models::make_surrogate(small_spec(Arch::parametric_ld), 2);
  const auto& ds = train_set();
  const auto ev = evaluate(*model, ds);
  const auto t = ds.time_grid();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    // Row-by-row prediction from physical parameters, normalized by hand.
    Matrix f(1, 200), mu(1, 2);
    for (std::size_t j = 0; j < 200; ++j) f(0, static_cast<Eigen::Index>(j)) = ds.samples[i].force[j];
    for (std::size_t d = 0; d < 2; ++d) mu(0, static_cast<Eigen::Index>(d)) = ds.normalization.normalize_mu(d, ds.samples[i].mu[d]);
    const Matrix p = model->predict(f, mu, t);
    double sn = 0.0, sd = 0.0;
    for (std::size_t j = 0; j < 200; ++j) {
      const double y = ds.normalization.normalize_response(0, ds.samples[i].response[j]);
      sn += (p(0, static_cast<Eigen::Index>(j)) - y) * (p(0, static_cast<Eigen::Index>(j)) - y);
      sd += y * y;
    }
    EXPECT_NEAR(ev.per_sample[i], std::sqrt(sn / sd), 1e-12);
    num += sn;
    den += sd;
  }
  EXPECT_NEAR(ev.aggregate, std::sqrt(num / den), 1e-12);
}

TEST(TrainForward, ZeroLearningRateLeavesWeightsUnchanged) {
  auto one = train_set();
  one.samples.resize(1);
  auto model = models::make_surrogate(small_spec(Arch::parametric_nd), 3);
  const auto before = snapshot(*model);
  const auto h = train_forward(*model, one, config(1, 0.0));
  EXPECT_EQ(snapshot(*model), before);
  ASSERT_EQ(h.train_loss.size(), 1u);
  EXPECT_EQ(h.train_loss[0], h.initial_loss);
}

TEST(TrainForward, LossDecreasesOnASmallProblem) {
  auto model = models::make_surrogate(small_spec(Arch::parametric_ld), 4);
  const auto h = train_forward(*model, train_set(), config(200, 1e-3));
  ASSERT_EQ(h.train_loss.size(), 200u);
  EXPECT_LT(h.best_loss, 0.7 * h.initial_loss);
  EXPECT_LT(h.train_loss.back(), h.train_loss.front());
}

TEST(TrainForward, RestoresTheBestCheckpoint) {
  for (Arch a : {Arch::parametric_ld, Arch::parametric_nd, Arch::vanilla, Arch::mlp}) {
    auto model = models::make_surrogate(small_spec(a), 5);
    // A large step size makes the loss curve non-monotone.
    const auto h = train_forward(*model, train_set(), config(40, 2e-2));
    EXPECT_EQ(h.best_loss, *std::min_element(h.train_loss.begin(), h.train_loss.end()));
    EXPECT_EQ(h.train_loss[h.best_epoch - 1], h.best_loss);
    EXPECT_NEAR(evaluate(*model, train_set()).mean_per_sample(), h.best_loss, 1e-12) << models::to_string(a);
  }
}

TEST(TrainForward, SameSeedGivesIdenticalRuns) {
  auto a = models::make_surrogate(small_spec(Arch::parametric_nd), 6);
  auto b = models::make_surrogate(small_spec(Arch::parametric_nd), 6);
  const auto ha = train_forward(*a, train_set(), config(15, 1e-3), &train_set());
  const auto hb = train_forward(*b, train_set(), config(15, 1e-3), &train_set());
  EXPECT_EQ(ha.train_loss, hb.train_loss);
  EXPECT_EQ(ha.test_nrmse, hb.test_nrmse);
  EXPECT_EQ(snapshot(*a), snapshot(*b));
  auto c = models::make_surrogate(small_spec(Arch::parametric_nd), 6);
  auto cfg = config(15, 1e-3);
  cfg.seed = 9;
  EXPECT_NE(train_forward(*c, train_set(), cfg).train_loss, ha.train_loss);
}

TEST(TrainForward, FullBatchGradientIsTheMeanOfPerSampleGradients) {
  const auto model = models::make_surrogate(small_spec(Arch::parametric_nd), 7);
  const auto& ds = train_set();
  const Matrix f = ds.forces(), mu = ds.normalized_mu(), y = ds.normalized_responses();
  const auto t = ds.time_grid();
  auto full = model->zero_grads();
  {
    diffcore::Tape tape;
    tape.backward(batch_loss(tape, *model, f, mu, y, t, &full));
  }
  auto avg = model->zero_grads();
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    auto g = model->zero_grads();
    diffcore::Tape tape;
    tape.backward(batch_loss(tape, *model, f.row(i), mu.row(i), y.row(i), t, &g));
    for (std::size_t k = 0; k < g.size(); ++k) {
      for (std::size_t q = 0; q < g[k].size(); ++q) avg[k][q] += g[k][q] / static_cast<double>(f.rows());
    }
  }
  for (std::size_t k = 0; k < full.size(); ++k) {
    for (std::size_t q = 0; q < full[k].size(); ++q) EXPECT_NEAR(full[k][q], avg[k][q], 1e-10);
  }
}

TEST(TrainForward, PlateauStopAndEvaluationCadence) {
  auto model = models::make_surrogate(small_spec(Arch::parametric_ld), 8);
  auto cfg = config(50, 0.0);
  cfg.patience = 3;
  const auto h = train_forward(*model, train_set(), cfg);
  EXPECT_TRUE(h.stopped_early);
  EXPECT_EQ(h.train_loss.size(), 4u);

  cfg = config(12, 1e-4);
  cfg.eval_every = 5;
  const auto h2 = train_forward(*model, train_set(), cfg, &train_set());
  EXPECT_EQ(h2.eval_epochs, (std::vector<std::size_t>{5, 10, 12}));
  EXPECT_FALSE(h2.stopped_early);
}

TEST(TrainForward, RejectsInvalidInputs) {
  auto model = models::make_surrogate(small_spec(Arch::parametric_ld), 9);
  auto empty = train_set();
  empty.samples.clear();
  EXPECT_THROW(train_forward(*model, empty, config(1, 1e-3)), UserError);
  EXPECT_THROW(train_forward(*model, train_set(), config(0, 1e-3)), UserError);
  EXPECT_THROW(train_forward(*model, train_set(), config(1, -1.0)), UserError);
  EXPECT_THROW(train_forward(*model, train_set(), config(1, 1e-3, 0)), UserError);
  auto wide = small_spec(Arch::parametric_ld);
  wide.param = {3, 24, 12};
  wide.param_dim = 3;
  auto other = models::make_surrogate(wide, 1);
  EXPECT_THROW(train_forward(*other, train_set(), config(1, 1e-3)), UserError);
}
