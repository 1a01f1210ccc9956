#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <vector>

#include "pdon/datagen/dataset.hpp"
#include "pdon/inverse/gradient_init.hpp"
#include "pdon/inverse/refinement.hpp"

namespace pdon::inverse {

/// Physical-unit estimates for one sample. The restart statistics describe
/// how much the answer depends on the random starting point.
struct EstimationResult {
  std::size_t sample = 0;
  std::vector<double> truth;
  std::vector<double> init;     // μ*
  std::vector<double> refined;  // μ̂ = refined μ*
  double init_loss = 0.0;       // forward NRMSE at μ*
  double refined_loss = 0.0;    // forward NRMSE at μ̂
  std::vector<double> init_mean, init_std;
  std::vector<double> refined_mean, refined_std;
};

struct EstimationSummary {
  std::vector<EstimationResult> samples;
  std::vector<double> init_nrmse;     // per parameter dimension
  std::vector<double> refined_nrmse;  // empty without a refinement network
};

/// Training rows for the correction network from an initialization run:
/// either the selected μ* per sample or every restart endpoint.
inline RefineData refine_data(const datagen::Dataset& ds, const std::vector<InitResult>& init, bool all_restarts) {
  if (init.size() != ds.size()) throw UserError("refine_data: one initialization per sample is required");
  const Matrix f = ds.forces();
  const Matrix y = ds.normalized_responses();
  const Matrix mu = ds.normalized_mu();
  std::vector<std::size_t> owner;
  std::vector<std::vector<double>> starts;
  for (std::size_t i = 0; i < init.size(); ++i) {
    if (!all_restarts) {
      owner.push_back(i);
      starts.push_back(init[i].best);
      continue;
    }
    for (Eigen::Index q = 0; q < init[i].restarts.rows(); ++q) {
      if (!std::isfinite(init[i].restart_loss[static_cast<std::size_t>(q)])) continue;
      owner.push_back(i);
      const auto row = init[i].restarts.row(q);
      starts.emplace_back(row.data(), row.data() + row.size());
    }
  }
  RefineData d{forward::gather_rows(f, owner), forward::gather_rows(y, owner), forward::gather_rows(mu, owner),
               Matrix(static_cast<Eigen::Index>(owner.size()), mu.cols())};
  for (std::size_t k = 0; k < starts.size(); ++k) {
    for (std::size_t j = 0; j < starts[k].size(); ++j) d.starts(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = starts[k][j];
  }
  return d;
}

/// Initialization on every sample of `ds`, optionally followed by the learned
/// correction, which is applied to every restart endpoint.
inline EstimationSummary estimate(const models::Surrogate& model, const datagen::Dataset& ds, const InitConfig& cfg,
                                  const RefinementNet* refinement = nullptr,
                                  const std::vector<InitResult>* precomputed = nullptr) {
  const std::vector<double> grid = ds.time_grid();
  const Matrix forces = ds.forces();
  const Matrix responses = ds.normalized_responses();
  const std::vector<InitResult> init =
      precomputed != nullptr ? *precomputed : gradient_init(model, forces, responses, grid, cfg);
  if (init.size() != ds.size()) throw UserError("estimate: initialization does not match the dataset");
  const std::size_t dim = model.param_dim();
  const auto& norm = ds.normalization;
  auto phys = [&](std::span<const double> u) {
    std::vector<double> v(u.size());
    for (std::size_t d = 0; d < u.size(); ++d) v[d] = norm.denormalize_mu(d, u[d]);
    return v;
  };
  auto phys_std = [&](std::span<const double> s) {
    std::vector<double> v(s.size());
    for (std::size_t d = 0; d < s.size(); ++d) v[d] = s[d] * (norm.mu_upper[d] - norm.mu_lower[d]);
    return v;
  };

  Matrix refined_all;
  std::vector<double> refined_loss;
  if (refinement != nullptr) {
    const RefineData data = refine_data(ds, init, true);
    const auto cond = model.condition(data.forces, grid);
    const std::vector<double> lo = cfg.lower_bounds(dim);
    const std::vector<double> hi = cfg.upper_bounds(dim);
    refined_all = refine(*cond, *refinement, data.starts, data.responses, lo, hi);
    refined_loss = forward::nrmse_per_sample(cond->predict(refined_all), data.responses);
  }

  EstimationSummary out;
  Matrix truth(static_cast<Eigen::Index>(ds.size()), static_cast<Eigen::Index>(dim));
  Matrix init_est = truth;
  Matrix ref_est = truth;
  std::size_t row = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const InitResult& r = init[i];
    EstimationResult e;
    e.sample = i;
    e.truth = ds.samples[i].mu;
    e.init = phys(r.best);
    e.init_loss = r.best_loss;
    e.init_mean = phys(r.mean);
    e.init_std = phys_std(r.stddev);
    if (refinement != nullptr) {
      // Rows of the valid restarts of sample i, in restart order.
      std::vector<double> loss;
      Matrix rows(0, static_cast<Eigen::Index>(dim));
      std::size_t chosen = 0;
      for (std::size_t q = 0; q < r.restart_loss.size(); ++q) {
        if (!std::isfinite(r.restart_loss[q])) continue;
        if (q == r.best_restart) chosen = loss.size();
        rows.conservativeResize(rows.rows() + 1, Eigen::NoChange);
        rows.row(rows.rows() - 1) = refined_all.row(static_cast<Eigen::Index>(row));
        loss.push_back(refined_loss[row]);
        ++row;
      }
      const auto best = rows.row(static_cast<Eigen::Index>(chosen));
      e.refined = phys(std::span<const double>(best.data(), static_cast<std::size_t>(best.size())));
      e.refined_loss = loss[chosen];
      std::vector<double> m, s;
      restart_stats(rows, loss, m, s);
      e.refined_mean = phys(m);
      e.refined_std = phys_std(s);
    }
    for (std::size_t d = 0; d < dim; ++d) {
      const auto di = static_cast<Eigen::Index>(d);
      truth(static_cast<Eigen::Index>(i), di) = e.truth[d];
      init_est(static_cast<Eigen::Index>(i), di) = e.init[d];
      if (refinement != nullptr) ref_est(static_cast<Eigen::Index>(i), di) = e.refined[d];
    }
    out.samples.push_back(std::move(e));
  }
  out.init_nrmse = parameter_nrmse(init_est, truth);
  if (refinement != nullptr) out.refined_nrmse = parameter_nrmse(ref_est, truth);
  return out;
}

/// One row per sample: truth, estimates, losses and restart spreads.
inline void write_estimates_csv(const EstimationSummary& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw UserError("cannot write '" + path.string() + "'");
  const std::size_t dim = s.samples.empty() ? 0 : s.samples.front().truth.size();
  const bool refined = !s.refined_nrmse.empty();
  out << "sample";
  for (std::size_t d = 0; d < dim; ++d) {
    out << ",mu" << d + 1 << "_true,mu" << d + 1 << "_init,mu" << d + 1 << "_init_std";
    if (refined) out << ",mu" << d + 1 << "_refined,mu" << d + 1 << "_refined_std";
  }
  out << ",init_loss";
  if (refined) out << ",refined_loss";
  out << '\n' << std::setprecision(17);
  for (const auto& e : s.samples) {
    out << e.sample;
    for (std::size_t d = 0; d < dim; ++d) {
      out << ',' << e.truth[d] << ',' << e.init[d] << ',' << e.init_std[d];
      if (refined) out << ',' << e.refined[d] << ',' << e.refined_std[d];
    }
    out << ',' << e.init_loss;
    if (refined) out << ',' << e.refined_loss;
    out << '\n';
  }
}

}  // namespace pdon::inverse
