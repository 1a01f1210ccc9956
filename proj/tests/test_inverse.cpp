#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "pdon/datagen/dataset.hpp"
#include "pdon/forward/train.hpp"
#include "pdon/inverse/estimate.hpp"
#include "pdon/inverse/gradient_init.hpp"
#include "pdon/inverse/refinement.hpp"
#include "support.hpp"

using namespace pdon;
using namespace pdon::inverse;
using diffcore::Matrix;
using models::Arch;

namespace {

const datagen::Dataset& train_set() {
  static const datagen::Dataset ds = [] {
    datagen::GenerateOptions o;
    o.n = 16;
    o.seed = 31;
    return datagen::generate_dataset(o);
  }();
  return ds;
}

/// A small parametric surrogate trained briefly on `train_set()`.
const models::Surrogate& surrogate() {
  static const std::unique_ptr<models::Surrogate> m = [] {
    auto s = models::default_config(Arch::parametric_ld, models::Family::duffing);
    s.branch = {200, 24, 12};
    s.param = {2, 24, 12};
    s.trunk = {20, 24, 12};
    auto model = models::make_surrogate(s, 4);
    forward::TrainConfig cfg;
    cfg.epochs = 150;
    cfg.batch_size = 8;
    cfg.seed = 2;
    forward::train_forward(*model, train_set(), cfg);
    return model;
  }();
  return *m;
}

/// Surrogate with response μ1 + μ2·t + (1 + 0.1·Σf), so the loss is the norm of an affine map.
std::unique_ptr<models::Surrogate> linear_surrogate() {
  models::NetworkSpec s;
  s.arch = Arch::vanilla;
  s.resolution = 8;
  s.param_dim = 2;
  s.pe_order = 0;
  s.branch = {10, 3};
  s.trunk = {1, 3};
  std::vector<double> bw(33, 0.0);
  bw[8] = 1.0;  // b0 = μ1
  bw[10 + 9] = 1.0;  // b1 = μ2
  for (std::size_t k = 0; k < 8; ++k) bw[20 + k] = 0.1;
  bw[32] = 1.0;  // b2 = 1 + 0.1·Σf
  const std::vector<double> tw{0.0, 1.0, 0.0, 1.0, 0.0, 1.0};  // τ = (1, t, 1)
  return models::assemble(s, {diffcore::DenseNetwork({10, 3}, diffcore::Activation::relu, bw),
                              diffcore::DenseNetwork({1, 3}, diffcore::Activation::relu, tw)});
}

std::vector<double> grid8() {
  std::vector<double> t(8);
  for (std::size_t j = 0; j < 8; ++j) t[j] = 0.25 * static_cast<double>(j);
  return t;
}

std::vector<std::vector<double>> snapshot(const models::Surrogate& m) {
  std::vector<std::vector<double>> out;
  for (const auto* n : m.networks()) out.emplace_back(n->weights().begin(), n->weights().end());
  return out;
}

/// (forces, normalized truth μ, surrogate responses) for the first `n` training samples.
struct Realizable {
  Matrix forces, mu, responses;
};

Realizable realizable(std::size_t n) {
  const auto& ds = train_set();
  Realizable r{ds.forces().topRows(static_cast<Eigen::Index>(n)), ds.normalized_mu().topRows(static_cast<Eigen::Index>(n)), {}};
  r.responses = surrogate().predict(r.forces, r.mu, ds.time_grid());
  return r;
}

RefineData refine_rows(const InitConfig& cfg) {
  const auto& ds = train_set();
  const auto init = gradient_init(surrogate(), ds.forces(), ds.normalized_responses(), ds.time_grid(), cfg);
  return refine_data(ds, init, true);
}

InitConfig short_init() {
  InitConfig c;
  c.epochs = 150;
  c.restarts = 3;
  c.learning_rate = 1e-2;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(RestartStats, MeanAndPopulationStdOverFiniteRows) {
  Matrix v(4, 2);
  v << 1, 10, 3, 10, 100, -5, 5, 13;
  const double inf = std::numeric_limits<double>::infinity();
  const std::vector<double> loss{0.1, 0.2, inf, 0.3};
  std::vector<double> mean, sd;
  restart_stats(v, loss, mean, sd);
  EXPECT_DOUBLE_EQ(mean[0], 3.0);
  EXPECT_DOUBLE_EQ(mean[1], 11.0);
  EXPECT_DOUBLE_EQ(sd[0], std::sqrt(8.0 / 3.0));
  EXPECT_DOUBLE_EQ(sd[1], std::sqrt(2.0));
}

TEST(InitConfig, RejectsBadSettings) {
  InitConfig c;
  c.restarts = 0;
  EXPECT_THROW(c.validate(2), UserError);
  c = InitConfig{};
  c.lower = {0.0, 0.5};
  c.upper = {1.0, 0.5};
  EXPECT_THROW(c.validate(2), UserError);
  c.upper = {1.0};
  EXPECT_THROW(c.validate(2), UserError);
}

TEST(GradientInit, RecoversParametersOfAnAffineSurrogate) {
  const auto model = linear_surrogate();
  Rng rng(3);
  const Matrix f = pdon::testing::random_matrix(3, 8, rng);
  Matrix mu(3, 2);
  mu << 0.3, 0.7, 0.8, 0.15, 0.5, 0.5;
  const Matrix y = model->predict(f, mu, grid8());
  InitConfig cfg;
  cfg.epochs = 4000;
  cfg.restarts = 2;
  cfg.seed = 1;
  const auto res = gradient_init(*model, f, y, grid8(), cfg);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_LT(res[i].best_loss, 1e-4);
    for (std::size_t d = 0; d < 2; ++d) EXPECT_NEAR(res[i].best[d], mu(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)), 1e-3);
  }
}

TEST(GradientInit, RecoversSurrogateRealizableParameters) {
  const auto r = realizable(4);
  InitConfig cfg;
  cfg.epochs = 3000;
  cfg.restarts = 5;
  cfg.seed = 2;
  const auto res = gradient_init(surrogate(), r.forces, r.responses, train_set().time_grid(), cfg);
  for (std::size_t i = 0; i < res.size(); ++i) {
    for (std::size_t d = 0; d < 2; ++d) {
      EXPECT_NEAR(res[i].best[d], r.mu(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)), 1e-3) << "sample " << i;
    }
  }
}

TEST(GradientInit, AgreesWithAGridSearchOracle) {
  const auto model = linear_surrogate();
  Rng rng(4);
  const Matrix f = pdon::testing::random_matrix(1, 8, rng);
  Matrix mu(1, 2);
  mu << 0.62, 0.27;
  // Perturb the target so the minimum is not exactly realizable.
  Matrix y = model->predict(f, mu, grid8());
  y += 0.05 * pdon::testing::random_matrix(1, 8, rng) * y.cwiseAbs().maxCoeff();
  const std::size_t n = 50;
  const double cell = 1.0 / static_cast<double>(n - 1);
  Matrix pts(static_cast<Eigen::Index>(n * n), 2);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) pts.row(static_cast<Eigen::Index>(a * n + b)) << a * cell, b * cell;
  }
  const Matrix pred = model->predict(repeat_rows(f, n * n), pts, grid8());
  const auto loss = forward::nrmse_per_sample(pred, repeat_rows(y, n * n));
  const auto k = static_cast<Eigen::Index>(std::min_element(loss.begin(), loss.end()) - loss.begin());
  InitConfig cfg;
  cfg.epochs = 4000;
  cfg.restarts = 3;
  const auto res = gradient_init(*model, f, y, grid8(), cfg);
  EXPECT_LE(res[0].best_loss, loss[static_cast<std::size_t>(k)] + 1e-12);
  for (Eigen::Index d = 0; d < 2; ++d) EXPECT_LE(std::abs(res[0].best[static_cast<std::size_t>(d)] - pts(k, d)), cell);
}

TEST(GradientInit, RespectsBoundsAndFreezesTheSurrogate) {
  const auto r = realizable(3);
  const auto before = snapshot(surrogate());
  InitConfig cfg = short_init();
  cfg.lower = {0.2, 0.4};
  cfg.upper = {0.3, 0.45};
  const auto res = gradient_init(surrogate(), r.forces, r.responses, train_set().time_grid(), cfg);
  EXPECT_EQ(snapshot(surrogate()), before);
  for (const auto& s : res) {
    ASSERT_EQ(s.restarts.rows(), 3);
    for (Eigen::Index q = 0; q < 3; ++q) {
      EXPECT_GE(s.restarts(q, 0), 0.2);
      EXPECT_LE(s.restarts(q, 0), 0.3);
      EXPECT_GE(s.restarts(q, 1), 0.4);
      EXPECT_LE(s.restarts(q, 1), 0.45);
    }
    EXPECT_EQ(s.best_loss, s.restart_loss[s.best_restart]);
  }
}

TEST(GradientInit, IsDeterministicAndReportsKeptIterateLosses) {
  const auto r = realizable(3);
  const auto a = gradient_init(surrogate(), r.forces, r.responses, train_set().time_grid(), short_init());
  const auto b = gradient_init(surrogate(), r.forces, r.responses, train_set().time_grid(), short_init());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].restarts, b[i].restarts);
    EXPECT_EQ(a[i].restart_loss, b[i].restart_loss);
    Matrix best(1, 2);
    best << a[i].best[0], a[i].best[1];
    const Matrix p = surrogate().predict(r.forces.row(static_cast<Eigen::Index>(i)), best, train_set().time_grid());
    EXPECT_EQ(forward::nrmse(p, r.responses.row(static_cast<Eigen::Index>(i))), a[i].best_loss);
  }
}

TEST(InitFile, RoundTripKeepsDiscardedRestarts) {
  const auto r = realizable(2);
  auto res = gradient_init(surrogate(), r.forces, r.responses, train_set().time_grid(), short_init());
  res[1].restart_loss[2] = std::numeric_limits<double>::infinity();
  pdon::testing::TempDir dir("init");
  save_init(res, dir / "init.json");
  const auto back = load_init(dir / "init.json");
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].restarts, res[i].restarts);
    EXPECT_EQ(back[i].restart_loss, res[i].restart_loss);
    EXPECT_EQ(back[i].best, res[i].best);
    EXPECT_EQ(back[i].best_restart, res[i].best_restart);
  }
}

TEST(Refinement, GradientClippingCapsRowNorms) {
  Matrix g(3, 2);
  g << 3, 4, 0.3, 0.4, 0, 0;
  clip_gradient_rows(g);
  EXPECT_NEAR(g.row(0).norm(), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(g(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(g(1, 1), 0.4);
  EXPECT_EQ(g.row(2).norm(), 0.0);
}

TEST(Refinement, ZeroInitializedNetworkIsTheIdentity) {
  RefineConfig rc;
  rc.iterations = 3;
  const auto r = make_refinement_net(2, rc);
  const auto data = refine_rows(short_init());
  const std::vector<double> lo{0.0, 0.0}, hi{1.0, 1.0};
  const auto cond = surrogate().condition(data.forces, train_set().time_grid());
  EXPECT_EQ(refine(*cond, r, data.starts, data.responses, lo, hi), data.starts);
  const auto scale = ParameterScale::from(train_set().normalization);
  auto copy = r;
  rc.epochs = 1;
  rc.learning_rate = 0.0;
  const auto h = train_refinement(surrogate(), copy, data, train_set().time_grid(), train_set().normalization, rc);
  EXPECT_EQ(h.baseline_loss, refinement_loss(*cond, data.starts, data, scale));
  EXPECT_EQ(h.best_loss, h.baseline_loss);
  EXPECT_EQ(h.best_epoch, 0u);
}

TEST(Refinement, TrainingBeatsTheBaselineWithTheSurrogateFrozen) {
  const auto data = refine_rows(short_init());
  const auto before = snapshot(surrogate());
  RefineConfig rc;
  rc.epochs = 40;
  rc.hidden = {16, 16};
  rc.batch_size = 16;
  rc.seed = 3;
  auto r = make_refinement_net(2, rc);
  const auto h = train_refinement(surrogate(), r, data, train_set().time_grid(), train_set().normalization, rc);
  EXPECT_EQ(snapshot(surrogate()), before);
  EXPECT_LT(h.best_loss, h.baseline_loss);
  EXPECT_GT(h.best_epoch, 0u);
  // The restored weights reproduce the recorded best loss.
  const auto cond = surrogate().condition(data.forces, train_set().time_grid());
  const std::vector<double> lo{0.0, 0.0}, hi{1.0, 1.0};
  const auto scale = ParameterScale::from(train_set().normalization);
  EXPECT_NEAR(refinement_loss(*cond, refine(*cond, r, data.starts, data.responses, lo, hi), data, scale), h.best_loss, 1e-12);
}

TEST(Refinement, OutputIsClippedToTheBounds) {
  RefineConfig rc;
  auto r = make_refinement_net(2, rc);
  const std::size_t l = r.net.layer_count() - 1;
  r.net.weights()[r.net.bias_offset(l)] = 5.0;
  r.net.weights()[r.net.bias_offset(l) + 1] = -5.0;
  const auto data = refine_rows(short_init());
  const auto cond = surrogate().condition(data.forces, train_set().time_grid());
  const std::vector<double> lo{0.0, 0.0}, hi{1.0, 1.0};
  const Matrix out = refine(*cond, r, data.starts, data.responses, lo, hi);
  EXPECT_TRUE((out.col(0).array() == 1.0).all());
  EXPECT_TRUE((out.col(1).array() == 0.0).all());
}

TEST(Refinement, CheckpointRoundTrip) {
  RefineConfig rc;
  rc.iterations = 2;
  rc.clip_gradient = false;
  auto r = make_refinement_net(2, rc);
  r.net.weights()[r.net.parameter_count() - 1] = 0.125;
  pdon::testing::TempDir dir("refine");
  save_refinement(r, dir / "r.json");
  const auto back = load_refinement(dir / "r.json");
  EXPECT_EQ(back.iterations, 2u);
  EXPECT_FALSE(back.clip_gradient);
  EXPECT_TRUE(std::equal(back.net.weights().begin(), back.net.weights().end(), r.net.weights().begin()));
  auto bytes = diffcore::read_bytes(dir / "r.bin");
  bytes[0] ^= 1;
  diffcore::write_bytes(dir / "r.bin", bytes);
  EXPECT_THROW(load_refinement(dir / "r.json"), FormatError);
}

TEST(Estimate, ZeroCorrectionReproducesTheInitialization) {
  const auto& ds = train_set();
  const auto init = gradient_init(surrogate(), ds.forces(), ds.normalized_responses(), ds.time_grid(), short_init());
  const auto r = make_refinement_net(2, RefineConfig{});
  const auto s = estimate(surrogate(), ds, short_init(), &r, &init);
  ASSERT_EQ(s.samples.size(), ds.size());
  EXPECT_EQ(s.init_nrmse, s.refined_nrmse);
  for (const auto& e : s.samples) {
    EXPECT_EQ(e.refined, e.init);
    EXPECT_EQ(e.refined_loss, e.init_loss);
    for (std::size_t d = 0; d < 2; ++d) EXPECT_NEAR(e.refined_std[d], e.init_std[d], 1e-12);
  }
  // Physical units: μ* maps back through the normalization.
  EXPECT_NEAR(s.samples[0].init[0], ds.normalization.denormalize_mu(0, init[0].best[0]), 1e-12);
  const auto plain = estimate(surrogate(), ds, short_init(), nullptr, &init);
  EXPECT_TRUE(plain.refined_nrmse.empty());
  EXPECT_EQ(plain.init_nrmse, s.init_nrmse);
}
