#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <vector>

#include "pdon/datagen/dataset.hpp"
#include "pdon/dynamics/simulate.hpp"
#include "pdon/forward/metrics.hpp"
#include "pdon/models/surrogate.hpp"

namespace pdon::evalcli {

struct SuperresRow {
  std::size_t factor = 1;
  std::size_t resolution = 0;
  double nrmse = 0.0;
};

/// Queries a resolution-free model at `factor`-times finer time grids, keeping
/// the branch input at the training resolution, and scores it against
/// responses re-simulated on the same grid. Time points are j·(Δt/factor),
/// so with power-of-two factors every coarse point reappears bit-exactly.
struct SuperresOutput {
  std::vector<SuperresRow> rows;
  std::vector<Matrix> predictions;  // one per factor
};

inline dynamics::SimGrid refined_grid(const dynamics::SimGrid& g, std::size_t factor) {
  return dynamics::SimGrid{g.dt / static_cast<double>(factor), g.samples * factor, g.substeps};
}

inline SuperresOutput superres_eval(const models::Surrogate& model, const datagen::Dataset& ds,
                                    const std::vector<std::size_t>& factors = {1, 2, 4}) {
  if (!model.resolution_free()) {
    throw UserError("superres: the nonlinear decoder maps a fixed number of time points and cannot be queried "
                    "on a finer grid; use a linear-decoder model");
  }
  if (ds.channels != 1) throw UserError("superres: only single-channel Duffing datasets can be re-simulated");
  const Matrix forces = ds.forces();
  const Matrix mu = ds.normalized_mu();
  SuperresOutput out;
  for (std::size_t f : factors) {
    if (f == 0) throw UserError("superres: factors must be >= 1");
    const dynamics::SimGrid grid = refined_grid(ds.grid, f);
    std::vector<double> t(grid.samples);
    for (std::size_t j = 0; j < grid.samples; ++j) t[j] = grid.time(j);
    Matrix pred = model.predict(forces, mu, t);
    Matrix truth(pred.rows(), pred.cols());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& p = ds.samples[i].mu;
      const auto tr = dynamics::simulate_duffing(dynamics::DuffingParams{p[0], p[1], ds.cubic}, ds.sweep, grid);
      for (std::size_t j = 0; j < grid.samples; ++j) {
        truth(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = ds.normalization.normalize_response(0, tr.acceleration[j]);
      }
    }
    out.rows.push_back(SuperresRow{f, grid.samples, forward::nrmse(pred, truth)});
    out.predictions.push_back(std::move(pred));
  }
  return out;
}

inline void write_superres_csv(const std::vector<SuperresRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw UserError("cannot write '" + path.string() + "'");
  out << "factor,resolution,nrmse\n" << std::setprecision(17);
  for (const auto& r : rows) out << r.factor << ',' << r.resolution << ',' << r.nrmse << '\n';
}

}  // namespace pdon::evalcli
