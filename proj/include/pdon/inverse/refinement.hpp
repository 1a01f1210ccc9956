#pragma once

// Learned correction μ ← μ + R([μ, ∇μ L]) applied J times after the
// gradient-based initialization. The gradient input is treated as data.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "pdon/diffcore/checkpoint.hpp"
#include "pdon/diffcore/dense.hpp"
#include "pdon/diffcore/optimizer.hpp"
#include "pdon/forward/train.hpp"
#include "pdon/inverse/gradient_init.hpp"

namespace pdon::inverse {

using diffcore::Json;

struct RefineConfig {
  std::size_t epochs = 300;
  std::size_t iterations = 1;  // J
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::vector<std::size_t> hidden{64, 64};
  bool clip_gradient = true;  // rescale the gradient input to at most unit norm per row
  std::uint64_t seed = 0;

  void validate() const {
    if (iterations == 0) throw UserError("refine config: iterations must be >= 1");
    if (batch_size == 0) throw UserError("refine config: batch size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw UserError("refine config: bad learning rate");
  }
};

struct RefinementNet {
  diffcore::DenseNetwork net;
  std::size_t iterations = 1;
  bool clip_gradient = true;

  std::size_t param_dim() const { return net.output_size(); }
};

/// [2·dim, hidden..., dim] with a zero output layer, so the untrained
/// correction is exactly the identity map on μ.
inline RefinementNet make_refinement_net(std::size_t dim, const RefineConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> dims{2 * dim};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(dim);
  RefinementNet r{diffcore::init_weights(dims, derive_seed(cfg.seed, 0x2b)), cfg.iterations, cfg.clip_gradient};
  r.net.zero_output_layer();
  return r;
}

inline void clip_gradient_rows(Matrix& g) {
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    const double norm = g.row(i).norm();
    if (norm > 1.0) g.row(i) /= norm;
  }
}

/// Gradient input for the correction network at the current iterate.
inline Matrix correction_input(const models::ConditionedSurrogate& cond, const Matrix& mu, const Matrix& truth,
                               bool clip) {
  Matrix g = loss_gradient(cond, mu, truth).gradient;
  if (clip) clip_gradient_rows(g);
  Matrix in(mu.rows(), 2 * mu.cols());
  in << mu, g;
  return in;
}

/// Applies the J corrections and clips the result to the bounds.
inline Matrix refine(const models::ConditionedSurrogate& cond, const RefinementNet& r, const Matrix& starts,
                     const Matrix& truth, std::span<const double> lo, std::span<const double> hi) {
  if (static_cast<std::size_t>(starts.cols()) != r.param_dim()) throw UserError("refine: parameter dimension mismatch");
  Matrix mu = starts;
  for (std::size_t j = 0; j < r.iterations; ++j) {
    mu += r.net.forward_rows(correction_input(cond, mu, truth, r.clip_gradient));
  }
  clip_rows(mu, lo, hi);
  return mu;
}

/// Physical-unit scale of the normalized parameters.
struct ParameterScale {
  diffcore::RowVector lower;
  diffcore::RowVector span;

  static ParameterScale from(const datagen::Normalization& n) {
    const auto d = static_cast<Eigen::Index>(n.mu_lower.size());
    ParameterScale s{diffcore::RowVector(d), diffcore::RowVector(d)};
    for (Eigen::Index k = 0; k < d; ++k) {
      s.lower(k) = n.mu_lower[static_cast<std::size_t>(k)];
      s.span(k) = n.mu_upper[static_cast<std::size_t>(k)] - n.mu_lower[static_cast<std::size_t>(k)];
    }
    return s;
  }

  Matrix physical(const Matrix& normalized) const {
    Matrix out = normalized.array().rowwise() * span.array();
    out.rowwise() += lower;
    return out;
  }
};

/// Per-dimension NRMSE of parameter estimates over a set of samples.
inline std::vector<double> parameter_nrmse(const Matrix& estimate, const Matrix& truth) {
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols()) {
    throw UserError("parameter_nrmse: shape mismatch");
  }
  std::vector<double> out(static_cast<std::size_t>(truth.cols()));
  for (Eigen::Index d = 0; d < truth.cols(); ++d) {
    out[static_cast<std::size_t>(d)] = std::sqrt((estimate.col(d) - truth.col(d)).squaredNorm() / truth.col(d).squaredNorm());
  }
  return out;
}

/// Rows used to train or evaluate the correction network.
struct RefineData {
  Matrix forces;
  Matrix responses;  // normalized
  Matrix truth_mu;   // normalized
  Matrix starts;     // normalized initial estimates
};

struct RefineHistory {
  double baseline_loss = 0.0;  // with a zero correction
  std::vector<double> train_loss;
  std::size_t best_epoch = 0;  // 0: the zero correction was never beaten
  double best_loss = 0.0;
};

/// Parameter error in physical units (mean over dimensions) plus the mean
/// forward prediction error at the corrected estimate.
inline double refinement_loss(const models::ConditionedSurrogate& cond, const Matrix& estimate, const RefineData& data,
                              const ParameterScale& scale) {
  const std::vector<double> p = parameter_nrmse(scale.physical(estimate), scale.physical(data.truth_mu));
  const Matrix pred = cond.predict(estimate);
  return forward::mean(p) + forward::mean(forward::nrmse_per_sample(pred, data.responses));
}

/// Trains the correction network with the surrogate frozen; the weights with
/// the lowest end-of-epoch loss on `data` are kept (the zero correction included).
inline RefineHistory train_refinement(const models::Surrogate& model, RefinementNet& r, const RefineData& data,
                                      std::span<const double> t_grid, const datagen::Normalization& norm,
                                      const RefineConfig& cfg, const forward::ProgressFn& progress = {}) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(data.forces.rows());
  if (n == 0 || data.responses.rows() != data.forces.rows() || data.truth_mu.rows() != data.forces.rows() ||
      data.starts.rows() != data.forces.rows()) {
    throw UserError("train_refinement: inconsistent row counts");
  }
  const std::size_t dim = model.param_dim();
  if (r.param_dim() != dim || static_cast<std::size_t>(data.starts.cols()) != dim) {
    throw UserError("train_refinement: parameter dimension mismatch");
  }
  const ParameterScale scale = ParameterScale::from(norm);
  const std::vector<double> lo(dim, 0.0);
  const std::vector<double> hi(dim, 1.0);
  const auto full = model.condition(data.forces, t_grid);
  auto epoch_loss = [&] { return refinement_loss(*full, refine(*full, r, data.starts, data.responses, lo, hi), data, scale); };

  RefineHistory h;
  h.baseline_loss = refinement_loss(*full, [&] {
    Matrix s = data.starts;
    clip_rows(s, lo, hi);
    return s;
  }(), data, scale);
  h.best_loss = epoch_loss();
  std::vector<double> best(r.net.weights().begin(), r.net.weights().end());

  diffcore::Optimizer opt(diffcore::OptimizerKind::adam, cfg.learning_rate, r.net.parameter_count());
  Rng rng(derive_seed(cfg.seed, 0x2c));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> grad(r.net.parameter_count());

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      std::span<const std::size_t> idx(order.data() + start, std::min(n, start + cfg.batch_size) - start);
      const Matrix f = forward::gather_rows(data.forces, idx);
      const Matrix y = forward::gather_rows(data.responses, idx);
      const Matrix truth_phys = scale.physical(forward::gather_rows(data.truth_mu, idx));
      const auto cond = model.condition(f, t_grid);

      std::fill(grad.begin(), grad.end(), 0.0);
      diffcore::Tape tape;
      diffcore::Var mu = tape.constant(forward::gather_rows(data.starts, idx));
      for (std::size_t j = 0; j < r.iterations; ++j) {
        Matrix g = loss_gradient(*cond, tape.value(mu), y).gradient;
        if (r.clip_gradient) clip_gradient_rows(g);
        diffcore::Var in = tape.concat_cols(mu, tape.constant(std::move(g)));
        mu = tape.add(mu, r.net.forward(tape, in, grad));
      }
      diffcore::Var param_loss =
          tape.scale(tape.sum(tape.column_nrmse(tape.column_affine(mu, scale.span, scale.lower), truth_phys)),
                     1.0 / static_cast<double>(dim));
      diffcore::Var fwd_loss = tape.mean(tape.row_nrmse(cond->record(tape, mu), y));
      diffcore::Var loss = tape.add(param_loss, fwd_loss);
      if (!std::isfinite(tape.value(loss)(0, 0))) {
        throw NumericalError("train_refinement: non-finite loss at epoch " + std::to_string(epoch));
      }
      tape.backward(loss);
      opt.step(r.net.weights(), grad);
    }
    const double l = epoch_loss();
    if (!std::isfinite(l)) throw NumericalError("train_refinement: non-finite loss after epoch " + std::to_string(epoch));
    h.train_loss.push_back(l);
    if (l < h.best_loss) {
      h.best_loss = l;
      h.best_epoch = epoch;
      best.assign(r.net.weights().begin(), r.net.weights().end());
    }
    if (progress) progress(epoch, l, std::numeric_limits<double>::quiet_NaN());
  }
  std::copy(best.begin(), best.end(), r.net.weights().begin());
  return h;
}

inline void save_refinement(const RefinementNet& r, const std::filesystem::path& json_path) {
  auto bin_path = std::filesystem::path(json_path).replace_extension(".bin");
  auto bytes = diffcore::encode_f64_le(r.net.weights());
  diffcore::write_bytes(bin_path, bytes);
  Json j;
  j["format"] = "pdon-refinement";
  j["version"] = 1;
  j["iterations"] = r.iterations;
  j["clip_gradient"] = r.clip_gradient;
  j["network"] = diffcore::describe(r.net);
  j["weights_file"] = bin_path.filename().string();
  j["crc64"] = diffcore::crc64_hex(diffcore::crc64(bytes));
  diffcore::write_json(json_path, j);
}

inline RefinementNet load_refinement(const std::filesystem::path& json_path) {
  Json j = diffcore::read_json(json_path);
  try {
    if (j.at("format").get<std::string>() != "pdon-refinement") throw FormatError("not a refinement checkpoint");
    auto weights = diffcore::load_weights_file(json_path, j);
    RefinementNet r{diffcore::restore(j.at("network"), weights), j.at("iterations").get<std::size_t>(),
                    j.at("clip_gradient").get<bool>()};
    if (r.iterations == 0) throw FormatError("refinement checkpoint: iterations must be >= 1");
    if (r.net.input_size() != 2 * r.net.output_size()) throw FormatError("refinement checkpoint: input must be 2·dim");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("refinement checkpoint: ") + e.what());
  }
}

}  // namespace pdon::inverse
