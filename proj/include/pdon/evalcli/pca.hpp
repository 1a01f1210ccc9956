#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <vector>

#include "pdon/datagen/dataset.hpp"
#include "pdon/error.hpp"
#include "pdon/models/surrogate.hpp"

namespace pdon::evalcli {

using diffcore::Matrix;

struct PcaResult {
  std::vector<double> explained;  // variance ratios, nonincreasing
  Eigen::VectorXd pc1;            // unit loading vector, first nonzero entry positive
  std::vector<double> scores;     // projection of each centered row onto pc1
};

/// Principal components of the rows of `features` from the eigen-decomposition
/// of their sample covariance. Constant features give zero ratios and scores.
inline PcaResult pca(const Matrix& features) {
  if (features.rows() < 2 || features.cols() < 1) throw UserError("pca: need at least two rows");
  const Matrix centered = features.rowwise() - features.colwise().mean();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(features.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericalError("pca: eigen-decomposition failed");

  // Eigen returns ascending eigenvalues; reverse and clamp roundoff negatives.
  const auto k = eig.eigenvalues().size();
  PcaResult r;
  r.explained.resize(static_cast<std::size_t>(k));
  double total = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) total += std::max(0.0, eig.eigenvalues()(i));
  r.scores.assign(static_cast<std::size_t>(features.rows()), 0.0);
  r.pc1 = eig.eigenvectors().col(k - 1);
  if (!(total > 0.0)) {
    std::fill(r.explained.begin(), r.explained.end(), 0.0);
    return r;
  }
  for (Eigen::Index i = 0; i < k; ++i) r.explained[static_cast<std::size_t>(i)] = std::max(0.0, eig.eigenvalues()(k - 1 - i)) / total;

  const double tiny = 1e-12 * r.pc1.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < r.pc1.size(); ++i) {
    if (std::abs(r.pc1(i)) > tiny) {
      if (r.pc1(i) < 0.0) r.pc1 = -r.pc1;
      break;
    }
  }
  const Eigen::VectorXd s = centered * r.pc1;
  for (Eigen::Index i = 0; i < s.size(); ++i) r.scores[static_cast<std::size_t>(i)] = s(i);
  return r;
}

struct PcaMap {
  Matrix points;  // grid_n² × 2, physical μ
  std::vector<double> scores;
  std::vector<double> explained;
};

/// First principal component of the parameter-net features P(μ) over a
/// uniform grid_n × grid_n grid spanning the normalization bounds.
inline PcaMap latent_pca(const models::ParametricDeepONet& model, const datagen::Normalization& norm,
                         std::size_t grid_n = 50) {
  if (grid_n < 2) throw UserError("latent_pca: grid_n must be >= 2");
  if (model.param_dim() != 2 || norm.mu_lower.size() != 2) throw UserError("latent_pca: requires a two-dimensional parameter");
  const auto n = static_cast<Eigen::Index>(grid_n * grid_n);
  Matrix points(n, 2);
  Matrix normalized(n, 2);
  for (std::size_t a = 0; a < grid_n; ++a) {
    for (std::size_t b = 0; b < grid_n; ++b) {
      const auto i = static_cast<Eigen::Index>(a * grid_n + b);
      const double u = static_cast<double>(a) / static_cast<double>(grid_n - 1);
      const double v = static_cast<double>(b) / static_cast<double>(grid_n - 1);
      normalized(i, 0) = u;
      normalized(i, 1) = v;
      points(i, 0) = norm.denormalize_mu(0, u);
      points(i, 1) = norm.denormalize_mu(1, v);
    }
  }
  PcaResult r = pca(model.param_net().forward_rows(normalized));
  return PcaMap{std::move(points), std::move(r.scores), std::move(r.explained)};
}

inline void write_pca_csv(const PcaMap& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw UserError("cannot write '" + path.string() + "'");
  out << "mu1,mu2,z1\n" << std::setprecision(17);
  for (Eigen::Index i = 0; i < m.points.rows(); ++i) {
    out << m.points(i, 0) << ',' << m.points(i, 1) << ',' << m.scores[static_cast<std::size_t>(i)] << '\n';
  }
}

}  // namespace pdon::evalcli
