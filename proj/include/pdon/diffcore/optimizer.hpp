#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pdon/error.hpp"

namespace pdon::diffcore {

enum class OptimizerKind { adam, sgd };

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

inline OptimizerKind optimizer_from_string(std::string_view s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw UserError("unknown optimizer '" + std::string(s) + "'");
}

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam or plain SGD over a fixed number of parameters, possibly spread over
/// several blocks (one per network) that are updated as one vector.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, std::size_t parameter_count, AdamSettings adam = {})
      : kind_(kind), learning_rate_(learning_rate), adam_(adam), size_(parameter_count) {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw UserError("optimizer: learning rate must be finite and non-negative");
    }
    if (kind_ == OptimizerKind::adam) {
      m_.assign(parameter_count, 0.0);
      v_.assign(parameter_count, 0.0);
    }
  }

  OptimizerKind kind() const { return kind_; }
  double learning_rate() const { return learning_rate_; }
  std::uint64_t step_count() const { return steps_; }
  std::size_t parameter_count() const { return size_; }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }

  void step(std::span<double> params, std::span<const double> grads) {
    std::span<double> p[] = {params};
    std::span<const double> g[] = {grads};
    step(std::span<std::span<double>>(p), std::span<std::span<const double>>(g));
  }

  /// Applies one update. A non-finite gradient rejects the whole step and
  /// leaves both parameters and optimizer state untouched.
  void step(std::span<std::span<double>> params, std::span<std::span<const double>> grads) {
    if (params.size() != grads.size()) throw UserError("optimizer: parameter/gradient block count mismatch");
    std::size_t total = 0;
    for (std::size_t b = 0; b < params.size(); ++b) {
      if (params[b].size() != grads[b].size()) throw UserError("optimizer: gradient block has wrong size");
      total += params[b].size();
    }
    if (total != size_) {
      throw UserError("optimizer: expected " + std::to_string(size_) + " parameters, got " + std::to_string(total));
    }
    for (std::size_t b = 0; b < grads.size(); ++b) {
      for (std::size_t i = 0; i < grads[b].size(); ++i) {
        if (!std::isfinite(grads[b][i])) {
          throw NumericalError("optimizer: non-finite gradient at parameter " + std::to_string(i) + " of block " +
                               std::to_string(b) + "; step rejected");
        }
      }
    }
    ++steps_;
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t b = 0; b < params.size(); ++b) {
        for (std::size_t i = 0; i < params[b].size(); ++i) params[b][i] -= learning_rate_ * grads[b][i];
      }
      return;
    }
    const double t = static_cast<double>(steps_);
    const double c1 = 1.0 - std::pow(adam_.beta1, t);
    const double c2 = 1.0 - std::pow(adam_.beta2, t);
    std::size_t k = 0;
    for (std::size_t b = 0; b < params.size(); ++b) {
      for (std::size_t i = 0; i < params[b].size(); ++i, ++k) {
        const double g = grads[b][i];
        m_[k] = adam_.beta1 * m_[k] + (1.0 - adam_.beta1) * g;
        v_[k] = adam_.beta2 * v_[k] + (1.0 - adam_.beta2) * g * g;
        const double m_hat = m_[k] / c1;
        const double v_hat = v_[k] / c2;
        params[b][i] -= learning_rate_ * m_hat / (std::sqrt(v_hat) + adam_.eps);
      }
    }
  }

 private:
  OptimizerKind kind_;
  double learning_rate_;
  AdamSettings adam_;
  std::size_t size_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::uint64_t steps_ = 0;
};

}  // namespace pdon::diffcore
