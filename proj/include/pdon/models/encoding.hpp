#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "pdon/error.hpp"

namespace pdon::models {

/// Integer-periodic Fourier features of a time coordinate:
/// [cos(ωt), sin(ωt), …, cos(kωt), sin(kωt)] with ω = 2π / L.
struct PositionalEncoder {
  std::size_t order = 10;  // k
  double period = 2.0;     // L

  std::size_t dimension() const { return 2 * order; }
  double omega() const { return 2.0 * std::numbers::pi / period; }

  void validate() const {
    if (order == 0) throw UserError("positional encoding: order k must be at least 1");
    if (!(period > 0.0) || !std::isfinite(period)) throw UserError("positional encoding: period must be positive");
  }

  void encode_into(double t, double* out) const {
    const double w = omega();
    for (std::size_t h = 1; h <= order; ++h) {
      const double a = static_cast<double>(h) * w * t;
      out[2 * (h - 1)] = std::cos(a);
      out[2 * (h - 1) + 1] = std::sin(a);
    }
  }
};

inline std::vector<double> encode_time(const PositionalEncoder& enc, double t) {
  enc.validate();
  std::vector<double> out(enc.dimension());
  enc.encode_into(t, out.data());
  return out;
}

}  // namespace pdon::models
