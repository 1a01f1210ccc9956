#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pdon/diffcore/tape.hpp"
#include "pdon/error.hpp"
#include "pdon/random.hpp"

namespace pdon::diffcore {

/// Hidden-layer activation. The output layer is always linear.
enum class Activation { relu, leaky_relu, identity };

inline constexpr double kLeakySlope = 0.01;

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::identity: return "identity";
  }
  return "?";
}

inline Activation activation_from_string(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "leaky_relu") return Activation::leaky_relu;
  if (s == "identity") return Activation::identity;
  throw UserError("unknown activation '" + std::string(s) + "'");
}

namespace kernel {

// Fixed summation order that depends only on n, so a row's result never
// depends on which batch it was evaluated in.
inline double dot(const double* a, const double* b, std::size_t n) {
  double acc[8] = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  }
  double s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline double activate(double v, Activation a) {
  switch (a) {
    case Activation::relu: return v > 0.0 ? v : 0.0;
    case Activation::leaky_relu: return v > 0.0 ? v : kLeakySlope * v;
    case Activation::identity: return v;
  }
  return v;
}

}  // namespace kernel

/// Fully connected network with a flat weight vector: for each layer the
/// row-major (out × in) weight matrix followed by the bias.
class DenseNetwork {
 public:
  DenseNetwork() = default;

  DenseNetwork(std::vector<std::size_t> dims, Activation hidden, std::vector<double> weights,
               std::uint64_t seed = 0)
      : dims_(std::move(dims)), activation_(hidden), weights_(std::move(weights)), seed_(seed) {
    validate_dims(dims_);
    if (weights_.size() != count_parameters(dims_)) {
      throw UserError("DenseNetwork: expected " + std::to_string(count_parameters(dims_)) + " weights, got " +
                      std::to_string(weights_.size()));
    }
  }

  static void validate_dims(std::span<const std::size_t> dims) {
    if (dims.size() < 2) throw UserError("DenseNetwork: layer list needs an input and an output size");
    for (std::size_t d : dims) {
      if (d == 0) throw UserError("DenseNetwork: layer sizes must be positive");
    }
  }

  static std::size_t count_parameters(std::span<const std::size_t> dims) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) n += dims[l] * dims[l + 1] + dims[l + 1];
    return n;
  }

  const std::vector<std::size_t>& dims() const { return dims_; }
  Activation activation() const { return activation_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t input_size() const { return dims_.front(); }
  std::size_t output_size() const { return dims_.back(); }
  std::size_t layer_count() const { return dims_.size() - 1; }
  std::size_t parameter_count() const { return weights_.size(); }

  std::span<const double> weights() const { return weights_; }
  std::span<double> weights() { return weights_; }

  std::size_t weight_offset(std::size_t layer) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layer; ++l) off += dims_[l] * dims_[l + 1] + dims_[l + 1];
    return off;
  }
  std::size_t bias_offset(std::size_t layer) const {
    return weight_offset(layer) + dims_[layer] * dims_[layer + 1];
  }

  /// Zeroes the last layer so the network outputs exactly zero.
  void zero_output_layer() {
    const std::size_t l = layer_count() - 1;
    std::fill(weights_.begin() + static_cast<std::ptrdiff_t>(weight_offset(l)), weights_.end(), 0.0);
  }

  std::vector<double> forward(std::span<const double> input) const {
    if (input.size() != input_size()) {
      throw UserError("DenseNetwork::forward: input length " + std::to_string(input.size()) + " != " +
                      std::to_string(input_size()));
    }
    std::vector<double> cur(input.begin(), input.end());
    std::vector<double> next;
    for (std::size_t l = 0; l < layer_count(); ++l) {
      const std::size_t in = dims_[l];
      const std::size_t out = dims_[l + 1];
      const double* w = weights_.data() + weight_offset(l);
      const double* b = weights_.data() + bias_offset(l);
      const bool last = l + 1 == layer_count();
      next.assign(out, 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        double v = kernel::dot(w + o * in, cur.data(), in) + b[o];
        next[o] = last ? v : kernel::activate(v, activation_);
      }
      cur.swap(next);
    }
    return cur;
  }

  /// Row-wise evaluation; each row's result is bit-identical to forward() on that row.
  Matrix forward_rows(const Matrix& inputs) const {
    if (static_cast<std::size_t>(inputs.cols()) != input_size()) {
      throw UserError("DenseNetwork::forward_rows: input width " + std::to_string(inputs.cols()) + " != " +
                      std::to_string(input_size()));
    }
    Matrix cur = inputs;
    for (std::size_t l = 0; l < layer_count(); ++l) {
      const std::size_t in = dims_[l];
      const std::size_t out = dims_[l + 1];
      const double* w = weights_.data() + weight_offset(l);
      const double* b = weights_.data() + bias_offset(l);
      const bool last = l + 1 == layer_count();
      Matrix next(cur.rows(), static_cast<Eigen::Index>(out));
      for (Eigen::Index i = 0; i < cur.rows(); ++i) {
        const double* x = cur.data() + i * cur.cols();
        for (std::size_t o = 0; o < out; ++o) {
          double v = kernel::dot(w + o * in, x, in) + b[o];
          next(i, static_cast<Eigen::Index>(o)) = last ? v : kernel::activate(v, activation_);
        }
      }
      cur.swap(next);
    }
    return cur;
  }

  /// Records the network on a tape. When grad is non-empty (same layout as
  /// weights()) the weights are trainable and their gradients accumulate there.
  Var forward(Tape& tape, Var input, std::span<double> grad = {}) const {
    if (!grad.empty() && grad.size() != weights_.size()) {
      throw UserError("DenseNetwork::forward: gradient buffer has wrong size");
    }
    Var cur = input;
    for (std::size_t l = 0; l < layer_count(); ++l) {
      const auto in = static_cast<Eigen::Index>(dims_[l]);
      const auto out = static_cast<Eigen::Index>(dims_[l + 1]);
      double* gw = grad.empty() ? nullptr : grad.data() + weight_offset(l);
      double* gb = grad.empty() ? nullptr : grad.data() + bias_offset(l);
      cur = tape.affine(cur, weights_.data() + weight_offset(l), weights_.data() + bias_offset(l), out, in, gw, gb);
      if (l + 1 == layer_count()) break;
      switch (activation_) {
        case Activation::relu: cur = tape.relu(cur); break;
        case Activation::leaky_relu: cur = tape.leaky_relu(cur, kLeakySlope); break;
        case Activation::identity: break;
      }
    }
    return cur;
  }

  friend bool operator==(const DenseNetwork&, const DenseNetwork&) = default;

 private:
  std::vector<std::size_t> dims_;
  Activation activation_ = Activation::relu;
  std::vector<double> weights_;
  std::uint64_t seed_ = 0;
};

/// Fan-in scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases.
inline DenseNetwork init_weights(std::vector<std::size_t> dims, std::uint64_t seed,
                                 Activation hidden = Activation::relu) {
  if (dims.empty()) throw UserError("init_weights: empty layer list");
  DenseNetwork::validate_dims(dims);
  Rng rng(seed);
  std::vector<double> w;
  w.reserve(DenseNetwork::count_parameters(dims));
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    for (std::size_t k = 0; k < dims[l] * dims[l + 1]; ++k) w.push_back(rng.uniform(-bound, bound));
    w.insert(w.end(), dims[l + 1], 0.0);
  }
  return DenseNetwork(std::move(dims), hidden, std::move(w), seed);
}

}  // namespace pdon::diffcore
