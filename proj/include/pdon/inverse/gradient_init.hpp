#pragma once

// Parameter estimation by gradient descent on a frozen surrogate's
// prediction loss, from several uniform random starts per sample.
// All parameter values here are in normalized [0, 1] coordinates.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pdon/diffcore/checkpoint.hpp"
#include "pdon/diffcore/optimizer.hpp"
#include "pdon/diffcore/tape.hpp"
#include "pdon/error.hpp"
#include "pdon/forward/metrics.hpp"
#include "pdon/models/surrogate.hpp"
#include "pdon/random.hpp"

namespace pdon::inverse {

using diffcore::Matrix;

struct InitConfig {
  std::size_t epochs = 5000;
  std::size_t restarts = 5;
  double learning_rate = 1e-3;
  std::vector<double> lower;  // empty: 0 in every dimension
  std::vector<double> upper;  // empty: 1 in every dimension
  std::uint64_t seed = 0;

  std::vector<double> lower_bounds(std::size_t dim) const { return lower.empty() ? std::vector<double>(dim, 0.0) : lower; }
  std::vector<double> upper_bounds(std::size_t dim) const { return upper.empty() ? std::vector<double>(dim, 1.0) : upper; }

  void validate(std::size_t dim) const {
    if (restarts == 0) throw UserError("init config: restarts must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw UserError("init config: bad learning rate");
    const auto lo = lower_bounds(dim);
    const auto hi = upper_bounds(dim);
    if (lo.size() != dim || hi.size() != dim) throw UserError("init config: bounds do not match parameter dimension");
    for (std::size_t d = 0; d < dim; ++d) {
      if (!std::isfinite(lo[d]) || !std::isfinite(hi[d]) || !(lo[d] < hi[d])) {
        throw UserError("init config: require finite bounds with lower < upper");
      }
    }
  }
};

/// Outcome for one (f, y) pair.
struct InitResult {
  std::vector<double> best;          // μ*: the restart with the lowest forward loss
  double best_loss = 0.0;
  std::size_t best_restart = 0;
  Matrix restarts;                   // restarts × dim, best iterate of each restart
  std::vector<double> restart_loss;  // +inf for discarded restarts
  std::vector<double> mean;
  std::vector<double> stddev;        // population standard deviation over valid restarts
};

inline Matrix repeat_rows(const Matrix& m, std::size_t times) {
  Matrix out(m.rows() * static_cast<Eigen::Index>(times), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (std::size_t r = 0; r < times; ++r) out.row(i * static_cast<Eigen::Index>(times) + static_cast<Eigen::Index>(r)) = m.row(i);
  }
  return out;
}

inline void clip_rows(Matrix& mu, std::span<const double> lo, std::span<const double> hi) {
  for (Eigen::Index i = 0; i < mu.rows(); ++i) {
    for (Eigen::Index d = 0; d < mu.cols(); ++d) {
      mu(i, d) = std::clamp(mu(i, d), lo[static_cast<std::size_t>(d)], hi[static_cast<std::size_t>(d)]);
    }
  }
}

/// Per-row forward losses and their gradients w.r.t. μ (row i only depends on μ row i).
struct LossAndGradient {
  std::vector<double> loss;
  Matrix gradient;
};

inline LossAndGradient loss_gradient(const models::ConditionedSurrogate& cond, const Matrix& mu, const Matrix& truth) {
  diffcore::Tape tape;
  diffcore::Var m = tape.leaf(mu);
  diffcore::Var per_row = tape.row_nrmse(cond.record(tape, m), truth);
  tape.backward(tape.sum(per_row));
  const Matrix& l = tape.value(per_row);
  return LossAndGradient{std::vector<double>(l.data(), l.data() + l.size()), tape.grad(m)};
}

/// Summary statistics over the finite-loss rows of `values`.
inline void restart_stats(const Matrix& values, std::span<const double> loss, std::vector<double>& mean,
                          std::vector<double>& stddev) {
  const auto dim = static_cast<std::size_t>(values.cols());
  mean.assign(dim, 0.0);
  stddev.assign(dim, 0.0);
  std::size_t count = 0;
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    if (!std::isfinite(loss[static_cast<std::size_t>(r)])) continue;
    ++count;
    for (std::size_t d = 0; d < dim; ++d) mean[d] += values(r, static_cast<Eigen::Index>(d));
  }
  if (count == 0) return;
  for (double& m : mean) m /= static_cast<double>(count);
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    if (!std::isfinite(loss[static_cast<std::size_t>(r)])) continue;
    for (std::size_t d = 0; d < dim; ++d) {
      const double e = values(r, static_cast<Eigen::Index>(d)) - mean[d];
      stddev[d] += e * e;
    }
  }
  for (double& s : stddev) s = std::sqrt(s / static_cast<double>(count));
}

/// Adam on μ̃ for every (sample, restart) jointly, weights frozen, iterates
/// clipped to the bounds after each step. Each restart keeps its lowest-loss
/// iterate; a restart whose loss turns non-finite is discarded.
inline std::vector<InitResult> gradient_init(const models::Surrogate& model, const Matrix& forces,
                                             const Matrix& responses, std::span<const double> t_grid,
                                             const InitConfig& cfg) {
  const std::size_t dim = model.param_dim();
  cfg.validate(dim);
  if (forces.rows() != responses.rows() || forces.rows() == 0) {
    throw UserError("gradient_init: need matching, non-empty (f, y) sets");
  }
  if (static_cast<std::size_t>(responses.cols()) != model.channels() * t_grid.size()) {
    throw UserError("gradient_init: response width does not match the model");
  }
  const auto n = static_cast<std::size_t>(forces.rows());
  const std::size_t reps = cfg.restarts;
  const auto rows = static_cast<Eigen::Index>(n * reps);
  const std::vector<double> lo = cfg.lower_bounds(dim);
  const std::vector<double> hi = cfg.upper_bounds(dim);

  const Matrix truth = repeat_rows(responses, reps);
  const auto cond = model.condition(repeat_rows(forces, reps), t_grid);

  Rng rng(derive_seed(cfg.seed, 0x1a));
  Matrix mu(rows, static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (std::size_t d = 0; d < dim; ++d) mu(i, static_cast<Eigen::Index>(d)) = rng.uniform(lo[d], hi[d]);
  }

  const double inf = std::numeric_limits<double>::infinity();
  Matrix best = mu;
  std::vector<double> best_loss(static_cast<std::size_t>(rows), inf);
  std::vector<char> alive(static_cast<std::size_t>(rows), 1);
  auto track = [&](const Matrix& at, std::span<const double> loss) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (!alive[k]) continue;
      if (!std::isfinite(loss[k])) {
        alive[k] = 0;
        best_loss[k] = inf;
      } else if (loss[k] < best_loss[k]) {
        best_loss[k] = loss[k];
        best.row(i) = at.row(i);
      }
    }
  };

  diffcore::Optimizer opt(diffcore::OptimizerKind::adam, cfg.learning_rate, static_cast<std::size_t>(mu.size()));
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    LossAndGradient lg = loss_gradient(*cond, mu, truth);
    track(mu, lg.loss);
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (!alive[static_cast<std::size_t>(i)] || !lg.gradient.row(i).allFinite()) {
        alive[static_cast<std::size_t>(i)] = 0;
        best_loss[static_cast<std::size_t>(i)] = inf;
        lg.gradient.row(i).setZero();
      }
    }
    opt.step(std::span<double>(mu.data(), static_cast<std::size_t>(mu.size())),
             std::span<const double>(lg.gradient.data(), static_cast<std::size_t>(lg.gradient.size())));
    clip_rows(mu, lo, hi);
  }
  {
    const Matrix pred = cond->predict(mu);
    std::vector<double> loss(static_cast<std::size_t>(rows));
    for (Eigen::Index i = 0; i < rows; ++i) {
      loss[static_cast<std::size_t>(i)] = std::sqrt((pred.row(i) - truth.row(i)).squaredNorm() / truth.row(i).squaredNorm());
    }
    track(mu, loss);
  }

  // Report losses of the kept iterates from the deterministic evaluation path.
  const Matrix pred = cond->predict(best);
  std::vector<InitResult> out(n);
  for (std::size_t s = 0; s < n; ++s) {
    InitResult& r = out[s];
    r.restarts = best.middleRows(static_cast<Eigen::Index>(s * reps), static_cast<Eigen::Index>(reps));
    r.restart_loss.assign(reps, inf);
    r.best_loss = inf;
    for (std::size_t q = 0; q < reps; ++q) {
      const auto i = static_cast<Eigen::Index>(s * reps + q);
      if (!std::isfinite(best_loss[static_cast<std::size_t>(i)])) continue;
      const double l = std::sqrt((pred.row(i) - truth.row(i)).squaredNorm() / truth.row(i).squaredNorm());
      if (!std::isfinite(l)) continue;
      r.restart_loss[q] = l;
      if (l < r.best_loss) {
        r.best_loss = l;
        r.best_restart = q;
      }
    }
    if (!std::isfinite(r.best_loss)) {
      throw NumericalError("gradient_init: every restart of sample " + std::to_string(s) + " diverged");
    }
    const auto row = r.restarts.row(static_cast<Eigen::Index>(r.best_restart));
    r.best.assign(row.data(), row.data() + row.size());
    restart_stats(r.restarts, r.restart_loss, r.mean, r.stddev);
  }
  return out;
}

/// Initialization results as JSON; discarded restarts are stored as null losses.
inline void save_init(const std::vector<InitResult>& results, const std::filesystem::path& path) {
  diffcore::Json samples = diffcore::Json::array();
  for (const auto& r : results) {
    diffcore::Json rows = diffcore::Json::array();
    diffcore::Json losses = diffcore::Json::array();
    for (Eigen::Index q = 0; q < r.restarts.rows(); ++q) {
      rows.push_back(std::vector<double>(r.restarts.row(q).data(), r.restarts.row(q).data() + r.restarts.cols()));
      const double l = r.restart_loss[static_cast<std::size_t>(q)];
      losses.push_back(std::isfinite(l) ? diffcore::Json(l) : diffcore::Json(nullptr));
    }
    samples.push_back({{"best_restart", r.best_restart}, {"restarts", rows}, {"restart_loss", losses}});
  }
  diffcore::write_json(path, {{"format", "pdon-init"}, {"version", 1}, {"samples", samples}});
}

inline std::vector<InitResult> load_init(const std::filesystem::path& path) {
  const diffcore::Json j = diffcore::read_json(path);
  try {
    if (j.at("format").get<std::string>() != "pdon-init") throw FormatError("'" + path.string() + "' is not an init file");
    std::vector<InitResult> out;
    for (const auto& s : j.at("samples")) {
      InitResult r;
      const auto rows = s.at("restarts").get<std::vector<std::vector<double>>>();
      if (rows.empty() || rows.front().empty()) throw FormatError("init file: empty restart list");
      r.restarts.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
      for (std::size_t q = 0; q < rows.size(); ++q) {
        if (rows[q].size() != rows.front().size()) throw FormatError("init file: ragged restart rows");
        for (std::size_t d = 0; d < rows[q].size(); ++d) r.restarts(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(d)) = rows[q][d];
        const auto& l = s.at("restart_loss").at(q);
        r.restart_loss.push_back(l.is_null() ? std::numeric_limits<double>::infinity() : l.get<double>());
      }
      r.best_restart = s.at("best_restart").get<std::size_t>();
      if (r.best_restart >= rows.size() || !std::isfinite(r.restart_loss[r.best_restart])) {
        throw FormatError("init file: invalid best restart");
      }
      r.best = rows[r.best_restart];
      r.best_loss = r.restart_loss[r.best_restart];
      restart_stats(r.restarts, r.restart_loss, r.mean, r.stddev);
      out.push_back(std::move(r));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("init file: ") + e.what());
  }
}

}  // namespace pdon::inverse
