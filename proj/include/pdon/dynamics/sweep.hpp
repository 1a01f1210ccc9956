#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "pdon/error.hpp"

namespace pdon::dynamics {

/// Linear sine sweep f(t) = A sin(2π[f_low t + (f_up − f_low) t² / (2T)]).
struct SweepSpec {
  double amplitude = 5.0;
  double f_low = 1.0;   // Hz
  double f_up = 10.0;   // Hz
  double duration = 2.0;  // s

  void validate() const {
    if (!std::isfinite(amplitude)) throw UserError("sweep: amplitude must be finite");
    if (!(f_low > 0.0) || !(f_up >= f_low) || !std::isfinite(f_up)) {
      throw UserError("sweep: require f_up >= f_low > 0");
    }
    if (!(duration > 0.0) || !std::isfinite(duration)) throw UserError("sweep: duration must be positive");
  }

  friend bool operator==(const SweepSpec&, const SweepSpec&) = default;
};

inline double sweep_force(const SweepSpec& s, double t) {
  // Integrators probe t + h slightly past the last output instant; allow
  // round-off but nothing beyond the sweep window.
  const double slack = 1e-9 * s.duration;
  if (!(t >= -slack) || !(t <= s.duration + slack)) {
    throw UserError("sweep_force: t=" + std::to_string(t) + " outside [0, " + std::to_string(s.duration) + "]");
  }
  const double phase = s.f_low * t + (s.f_up - s.f_low) * t * t / (2.0 * s.duration);
  return s.amplitude * std::sin(2.0 * std::numbers::pi * phase);
}

}  // namespace pdon::dynamics
