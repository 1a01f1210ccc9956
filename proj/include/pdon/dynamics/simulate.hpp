#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "pdon/dynamics/sweep.hpp"
#include "pdon/error.hpp"

namespace pdon::dynamics {

/// Output sampling t_j = j·dt for j < samples, with `substeps` RK4 steps per interval.
struct SimGrid {
  double dt = 0.01;
  std::size_t samples = 200;
  std::size_t substeps = 10;

  void validate(const SweepSpec& sweep) const {
    if (!(dt > 0.0) || samples == 0 || substeps == 0) throw UserError("grid: dt, samples and substeps must be positive");
    const double span = dt * static_cast<double>(samples);
    if (std::abs(span - sweep.duration) > 1e-9 * sweep.duration) {
      std::ostringstream os;
      os << "grid: samples*dt = " << span << " does not match sweep duration " << sweep.duration;
      throw UserError(os.str());
    }
  }

  double time(std::size_t j) const { return static_cast<double>(j) * dt; }

  friend bool operator==(const SimGrid&, const SimGrid&) = default;
};

/// Duffing oscillator ẍ = −μ1 x − μ2 ẋ − μ3 x³ + f(t).
struct DuffingParams {
  double stiffness = 50.0;
  double damping = 5.0;
  double cubic = 1e4;

  void validate() const {
    if (!(stiffness > 0.0) || !(damping >= 0.0) || !std::isfinite(cubic) || !std::isfinite(stiffness) ||
        !std::isfinite(damping)) {
      throw UserError("duffing: require stiffness > 0, damping >= 0, finite cubic term");
    }
  }

  double acceleration(double x, double v, double f) const {
    return -stiffness * x - damping * v - cubic * x * x * x + f;
  }
};

struct Trajectory {
  std::vector<double> displacement;
  std::vector<double> velocity;
  std::vector<double> acceleration;
};

/// One classic RK4 step of y' = rhs(t, y).
template <std::size_t N, class Rhs>
std::array<double, N> rk4_step(const Rhs& rhs, double t, const std::array<double, N>& y, double h) {
  auto axpy = [](const std::array<double, N>& a, double s, const std::array<double, N>& b) {
    std::array<double, N> r;
    for (std::size_t i = 0; i < N; ++i) r[i] = a[i] + s * b[i];
    return r;
  };
  const auto k1 = rhs(t, y);
  const auto k2 = rhs(t + 0.5 * h, axpy(y, 0.5 * h, k1));
  const auto k3 = rhs(t + 0.5 * h, axpy(y, 0.5 * h, k2));
  const auto k4 = rhs(t + h, axpy(y, h, k3));
  std::array<double, N> out;
  for (std::size_t i = 0; i < N; ++i) out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  return out;
}

/// Integrates from zero state; calls sample(j, t_j, state) at every output instant.
template <std::size_t N, class Rhs, class Sample>
void integrate_rk4(const Rhs& rhs, const SimGrid& grid, Sample&& sample) {
  std::array<double, N> y{};
  const double h = grid.dt / static_cast<double>(grid.substeps);
  sample(std::size_t{0}, 0.0, y);
  for (std::size_t j = 1; j < grid.samples; ++j) {
    const double t0 = grid.time(j - 1);
    for (std::size_t s = 0; s < grid.substeps; ++s) {
      y = rk4_step<N>(rhs, t0 + static_cast<double>(s) * h, y, h);
    }
    for (double v : y) {
      if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "integration blew up at t=" << grid.time(j);
        throw NumericalError(os.str());
      }
    }
    sample(j, grid.time(j), y);
  }
}

inline Trajectory simulate_duffing(const DuffingParams& p, const SweepSpec& sweep, const SimGrid& grid) {
  p.validate();
  sweep.validate();
  grid.validate(sweep);
  auto rhs = [&](double t, const std::array<double, 2>& y) {
    return std::array<double, 2>{y[1], p.acceleration(y[0], y[1], sweep_force(sweep, t))};
  };
  Trajectory out;
  out.displacement.resize(grid.samples);
  out.velocity.resize(grid.samples);
  out.acceleration.resize(grid.samples);
  try {
    integrate_rk4<2>(rhs, grid, [&](std::size_t j, double t, const std::array<double, 2>& y) {
      out.displacement[j] = y[0];
      out.velocity[j] = y[1];
      out.acceleration[j] = p.acceleration(y[0], y[1], sweep_force(sweep, t));
    });
  } catch (const NumericalError& e) {
    std::ostringstream os;
    os << "duffing(mu1=" << p.stiffness << ", mu2=" << p.damping << ", mu3=" << p.cubic << "): " << e.what();
    throw NumericalError(os.str());
  }
  return out;
}

using Matrix2 = std::array<std::array<double, 2>, 2>;

/// Linear 2-DOF system M ẍ + C ẋ + K x = load · f(t).
struct TwoDofSystem {
  Matrix2 mass{{{1.0, 0.0}, {0.0, 1.0}}};
  Matrix2 stiffness{{{200.0, -100.0}, {-100.0, 100.0}}};
  Matrix2 damping{{{10.0, -5.0}, {-5.0, 5.0}}};
  std::array<double, 2> load{1.0, 1.0};

  /// m = I, k = [[200, −100], [−100, 100]], c = 0.05·k.
  static TwoDofSystem reference() { return {}; }
};

/// Returns the two acceleration channels.
inline std::array<std::vector<double>, 2> simulate_linear_2dof(const TwoDofSystem& sys, const SweepSpec& sweep,
                                                               const SimGrid& grid) {
  sweep.validate();
  grid.validate(sweep);
  const Matrix2& m = sys.mass;
  const double det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
  const double scale = std::abs(m[0][0]) + std::abs(m[0][1]) + std::abs(m[1][0]) + std::abs(m[1][1]);
  if (!(std::abs(det) > 1e-12 * scale * scale)) throw UserError("simulate_linear_2dof: mass matrix is singular");
  const Matrix2 inv{{{m[1][1] / det, -m[0][1] / det}, {-m[1][0] / det, m[0][0] / det}}};

  auto accel = [&](const std::array<double, 4>& y, double f) {
    std::array<double, 2> rhs;
    for (int i = 0; i < 2; ++i) {
      rhs[i] = sys.load[i] * f - sys.damping[i][0] * y[2] - sys.damping[i][1] * y[3] - sys.stiffness[i][0] * y[0] -
               sys.stiffness[i][1] * y[1];
    }
    return std::array<double, 2>{inv[0][0] * rhs[0] + inv[0][1] * rhs[1], inv[1][0] * rhs[0] + inv[1][1] * rhs[1]};
  };
  auto rhs = [&](double t, const std::array<double, 4>& y) {
    auto a = accel(y, sweep_force(sweep, t));
    return std::array<double, 4>{y[2], y[3], a[0], a[1]};
  };
  std::array<std::vector<double>, 2> out{std::vector<double>(grid.samples), std::vector<double>(grid.samples)};
  integrate_rk4<4>(rhs, grid, [&](std::size_t j, double t, const std::array<double, 4>& y) {
    auto a = accel(y, sweep_force(sweep, t));
    out[0][j] = a[0];
    out[1][j] = a[1];
  });
  return out;
}

}  // namespace pdon::dynamics
