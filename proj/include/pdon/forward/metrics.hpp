#pragma once

#include <cmath>
#include <vector>

#include "pdon/datagen/dataset.hpp"
#include "pdon/diffcore/tape.hpp"
#include "pdon/error.hpp"
#include "pdon/models/surrogate.hpp"

namespace pdon::forward {

using diffcore::Matrix;

/// sqrt(Σ‖ŷ − y‖² / Σ y²) over every sample, channel and time point.
inline double nrmse(const Matrix& pred, const Matrix& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) throw UserError("nrmse: shape mismatch");
  const double denom = truth.squaredNorm();
  if (!(denom > 0.0)) throw UserError("nrmse: truth is identically zero");
  return std::sqrt((pred - truth).squaredNorm() / denom);
}

/// The same quantity computed separately for every row (sample).
inline std::vector<double> nrmse_per_sample(const Matrix& pred, const Matrix& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) throw UserError("nrmse: shape mismatch");
  std::vector<double> out(static_cast<std::size_t>(pred.rows()));
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    const double denom = truth.row(i).squaredNorm();
    if (!(denom > 0.0)) throw UserError("nrmse: truth of sample " + std::to_string(i) + " is identically zero");
    out[static_cast<std::size_t>(i)] = std::sqrt((pred.row(i) - truth.row(i)).squaredNorm() / denom);
  }
  return out;
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

struct Evaluation {
  double aggregate = 0.0;           // over the whole set
  std::vector<double> per_sample;   // one value per sample
  double mean_per_sample() const { return mean(per_sample); }
};

/// Predictions on the dataset's own time grid, in normalized response units.
inline Matrix predict_dataset(const models::Surrogate& model, const datagen::Dataset& ds) {
  if (ds.size() == 0) throw UserError("evaluate: empty dataset");
  if (ds.resolution != model.resolution() || ds.channels != model.channels() || ds.param_dim != model.param_dim()) {
    throw UserError("evaluate: dataset shape (r, c, dim mu) does not match the model");
  }
  return model.predict(ds.forces(), ds.normalized_mu(), ds.time_grid());
}

inline Evaluation evaluate(const models::Surrogate& model, const datagen::Dataset& ds) {
  const Matrix pred = predict_dataset(model, ds);
  const Matrix truth = ds.normalized_responses();
  return Evaluation{nrmse(pred, truth), nrmse_per_sample(pred, truth)};
}

}  // namespace pdon::forward
