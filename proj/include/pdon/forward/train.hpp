#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <vector>

#include "pdon/datagen/dataset.hpp"
#include "pdon/diffcore/optimizer.hpp"
#include "pdon/diffcore/tape.hpp"
#include "pdon/error.hpp"
#include "pdon/forward/metrics.hpp"
#include "pdon/models/surrogate.hpp"
#include "pdon/random.hpp"

namespace pdon::forward {

struct TrainConfig {
  std::size_t epochs = 10000;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  diffcore::OptimizerKind optimizer = diffcore::OptimizerKind::adam;
  std::uint64_t seed = 0;
  std::size_t eval_every = 100;  // test NRMSE cadence in epochs; 0 disables
  std::size_t patience = 0;      // stop after this many epochs without a new best; 0 disables

  void validate() const {
    if (epochs == 0) throw UserError("train config: epochs must be >= 1");
    if (batch_size == 0) throw UserError("train config: batch size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw UserError("train config: learning rate must be finite and non-negative");
    }
  }
};

struct TrainHistory {
  double initial_loss = 0.0;
  std::vector<double> train_loss;        // per epoch, evaluated after the epoch's last step
  std::vector<std::size_t> eval_epochs;  // 1-based epochs with a test evaluation
  std::vector<double> test_nrmse;
  std::size_t best_epoch = 0;  // 1-based
  double best_loss = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
};

/// Progress hook: (epoch, train loss, test NRMSE or NaN).
using ProgressFn = std::function<void(std::size_t, double, double)>;

/// Mean per-sample NRMSE of one recorded batch.
inline diffcore::Var batch_loss(diffcore::Tape& tape, const models::Surrogate& model, const Matrix& forces,
                                const Matrix& mu, const Matrix& truth, std::span<const double> grid,
                                models::GradBuffers* grads) {
  diffcore::Var y = model.record(tape, forces, tape.constant(mu), grid, grads);
  return tape.mean(tape.row_nrmse(y, truth));
}

inline Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

/// Mini-batch training on the mean per-sample NRMSE. The weights with the
/// lowest end-of-epoch training loss are restored into `model` on return.
inline TrainHistory train_forward(models::Surrogate& model, const datagen::Dataset& train, const TrainConfig& cfg,
                                  const datagen::Dataset* test = nullptr, const ProgressFn& progress = {}) {
  cfg.validate();
  if (train.size() == 0) throw UserError("train_forward: empty training set");
  const Matrix forces = train.forces();
  const Matrix mu = train.normalized_mu();
  const Matrix truth = train.normalized_responses();
  const std::vector<double> grid = train.time_grid();
  predict_dataset(model, train);  // shape check

  auto nets = model.networks();
  diffcore::Optimizer opt(cfg.optimizer, cfg.learning_rate, model.parameter_count());
  Rng rng(derive_seed(cfg.seed, 0xf0));

  TrainHistory h;
  h.initial_loss = evaluate(model, train).mean_per_sample();
  std::vector<std::vector<double>> best;
  for (auto* n : nets) best.emplace_back(n->weights().begin(), n->weights().end());

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      models::GradBuffers grads = model.zero_grads();
      diffcore::Tape tape;
      diffcore::Var loss = batch_loss(tape, model, gather_rows(forces, idx), gather_rows(mu, idx),
                                      gather_rows(truth, idx), grid, &grads);
      const double value = tape.value(loss)(0, 0);
      if (!std::isfinite(value)) {
        std::ostringstream os;
        os << "train_forward: non-finite loss at epoch " << epoch << ", batch " << batch;
        throw NumericalError(os.str());
      }
      tape.backward(loss);
      std::vector<std::span<double>> params;
      std::vector<std::span<const double>> gs;
      for (std::size_t k = 0; k < nets.size(); ++k) {
        params.emplace_back(nets[k]->weights());
        gs.emplace_back(grads[k]);
      }
      opt.step(std::span<std::span<double>>(params), std::span<std::span<const double>>(gs));
    }

    const double epoch_loss = evaluate(model, train).mean_per_sample();
    if (!std::isfinite(epoch_loss)) {
      std::ostringstream os;
      os << "train_forward: non-finite training loss after epoch " << epoch;
      throw NumericalError(os.str());
    }
    h.train_loss.push_back(epoch_loss);
    if (epoch_loss < h.best_loss) {
      h.best_loss = epoch_loss;
      h.best_epoch = epoch;
      for (std::size_t k = 0; k < nets.size(); ++k) {
        best[k].assign(nets[k]->weights().begin(), nets[k]->weights().end());
      }
    }
    double test_value = std::numeric_limits<double>::quiet_NaN();
    const bool last = epoch == cfg.epochs;
    const bool plateau = cfg.patience > 0 && epoch - h.best_epoch >= cfg.patience;
    if (test != nullptr && cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || last || plateau)) {
      test_value = evaluate(model, *test).aggregate;
      h.eval_epochs.push_back(epoch);
      h.test_nrmse.push_back(test_value);
    }
    if (progress) progress(epoch, epoch_loss, test_value);
    if (plateau) {
      h.stopped_early = true;
      break;
    }
  }
  for (std::size_t k = 0; k < nets.size(); ++k) {
    std::copy(best[k].begin(), best[k].end(), nets[k]->weights().begin());
  }
  return h;
}

}  // namespace pdon::forward
