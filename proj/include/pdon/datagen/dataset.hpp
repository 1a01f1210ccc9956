#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "pdon/datagen/domain.hpp"
#include "pdon/diffcore/checkpoint.hpp"
#include "pdon/diffcore/tape.hpp"
#include "pdon/dynamics/simulate.hpp"
#include "pdon/error.hpp"
#include "pdon/random.hpp"

namespace pdon::datagen {

using diffcore::Json;
using diffcore::Matrix;

/// Per-channel response scale and per-dimension affine map of μ onto [0, 1].
struct Normalization {
  std::vector<double> response_scale;
  std::vector<double> mu_lower;
  std::vector<double> mu_upper;

  static Normalization for_domain(const ParameterDomain& domain, std::size_t channels) {
    return Normalization{std::vector<double>(channels, 1.0), domain.lower(), domain.upper()};
  }

  double normalize_mu(std::size_t d, double v) const { return (v - mu_lower[d]) / (mu_upper[d] - mu_lower[d]); }
  double denormalize_mu(std::size_t d, double u) const { return mu_lower[d] + u * (mu_upper[d] - mu_lower[d]); }
  double normalize_response(std::size_t channel, double y) const { return y / response_scale[channel]; }
  double denormalize_response(std::size_t channel, double y) const { return y * response_scale[channel]; }

  void validate() const {
    if (mu_lower.size() != mu_upper.size() || mu_lower.empty()) throw FormatError("normalization: bad mu bounds");
    for (std::size_t d = 0; d < mu_lower.size(); ++d) {
      if (!(mu_upper[d] > mu_lower[d])) throw FormatError("normalization: mu map is not invertible");
    }
    for (double s : response_scale) {
      if (!(s > 0.0) || !std::isfinite(s)) throw FormatError("normalization: response scale must be positive");
    }
  }

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

/// (f, μ, y): force samples, physical parameters, responses row-major by channel.
struct SampleTriple {
  std::vector<double> force;
  std::vector<double> mu;
  std::vector<double> response;

  friend bool operator==(const SampleTriple&, const SampleTriple&) = default;
};

struct Dataset {
  CaseId case_id = CaseId::c1a;
  Role role = Role::train;
  std::size_t resolution = 0;  // r
  std::size_t channels = 1;    // c
  std::size_t param_dim = 2;
  std::uint64_t seed = 0;
  dynamics::SweepSpec sweep;
  dynamics::SimGrid grid;
  double cubic = 1e4;
  Normalization normalization;
  std::vector<SampleTriple> samples;

  std::size_t size() const { return samples.size(); }

  Matrix forces() const {
    Matrix m(static_cast<Eigen::Index>(size()), static_cast<Eigen::Index>(resolution));
    for (std::size_t i = 0; i < size(); ++i) {
      for (std::size_t j = 0; j < resolution; ++j) m(i, j) = samples[i].force[j];
    }
    return m;
  }

  /// μ mapped onto [0, 1] per dimension.
  Matrix normalized_mu() const {
    Matrix m(static_cast<Eigen::Index>(size()), static_cast<Eigen::Index>(param_dim));
    for (std::size_t i = 0; i < size(); ++i) {
      for (std::size_t d = 0; d < param_dim; ++d) m(i, d) = normalization.normalize_mu(d, samples[i].mu[d]);
    }
    return m;
  }

  Matrix physical_mu() const {
    Matrix m(static_cast<Eigen::Index>(size()), static_cast<Eigen::Index>(param_dim));
    for (std::size_t i = 0; i < size(); ++i) {
      for (std::size_t d = 0; d < param_dim; ++d) m(i, d) = samples[i].mu[d];
    }
    return m;
  }

  Matrix normalized_responses() const {
    Matrix m(static_cast<Eigen::Index>(size()), static_cast<Eigen::Index>(channels * resolution));
    for (std::size_t i = 0; i < size(); ++i) {
      for (std::size_t ch = 0; ch < channels; ++ch) {
        for (std::size_t j = 0; j < resolution; ++j) {
          const std::size_t k = ch * resolution + j;
          m(i, k) = normalization.normalize_response(ch, samples[i].response[k]);
        }
      }
    }
    return m;
  }

  std::vector<double> time_grid() const {
    std::vector<double> t(resolution);
    for (std::size_t j = 0; j < resolution; ++j) t[j] = grid.time(j);
    return t;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct GenerateOptions {
  CaseId case_id = CaseId::c1a;
  Role role = Role::train;
  std::size_t n = 100;
  dynamics::SweepSpec sweep{};
  dynamics::SimGrid grid{};
  double cubic = 1e4;
  std::uint64_t seed = 0;
};

/// Seed of the parameter sample. Test sets ignore the case id so that every
/// case is scored on the same test data.
inline std::uint64_t sampling_seed(const GenerateOptions& o) {
  const std::uint64_t stream = o.role == Role::test ? 0x7e57ULL : 0x1000ULL + static_cast<std::uint64_t>(o.case_id);
  return derive_seed(o.seed, stream);
}

inline Dataset generate_dataset(const GenerateOptions& o) {
  if (o.n == 0) throw UserError("generate_dataset: n must be at least 1");
  o.sweep.validate();
  o.grid.validate(o.sweep);
  const ParameterDomain domain = case_domain(o.case_id, o.role);
  Dataset ds;
  ds.case_id = o.case_id;
  ds.role = o.role;
  ds.resolution = o.grid.samples;
  ds.channels = 1;
  ds.param_dim = domain.dimension();
  ds.seed = o.seed;
  ds.sweep = o.sweep;
  ds.grid = o.grid;
  ds.cubic = o.cubic;
  // Case-1 responses are left unscaled; the μ map uses the shared global bounds.
  ds.normalization = Normalization::for_domain(case_domain(o.case_id, Role::train), 1);

  std::vector<double> force(o.grid.samples);
  for (std::size_t j = 0; j < o.grid.samples; ++j) force[j] = dynamics::sweep_force(o.sweep, o.grid.time(j));

  for (const auto& mu : lhs_sample(o.n, domain, sampling_seed(o))) {
    dynamics::DuffingParams p{mu[0], mu[1], o.cubic};
    dynamics::Trajectory tr;
    try {
      tr = dynamics::simulate_duffing(p, o.sweep, o.grid);
    } catch (const NumericalError& e) {
      std::ostringstream os;
      os << "dataset generation failed for mu=(" << mu[0] << ", " << mu[1] << "): " << e.what();
      throw NumericalError(os.str());
    }
    ds.samples.push_back(SampleTriple{force, mu, std::move(tr.acceleration)});
  }
  return ds;
}

namespace detail {

inline Json sweep_json(const dynamics::SweepSpec& s) {
  return Json{{"amplitude", s.amplitude}, {"f_low", s.f_low}, {"f_up", s.f_up}, {"duration", s.duration}};
}

inline Json grid_json(const dynamics::SimGrid& g) {
  return Json{{"dt", g.dt}, {"samples", g.samples}, {"substeps", g.substeps}};
}

}  // namespace detail

inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kDataName = "data.bin";

/// Writes manifest.json and data.bin into `dir` (created if needed).
inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::size_t d = ds.param_dim;
  std::vector<double> flat;
  flat.reserve(ds.size() * (ds.resolution + d + ds.channels * ds.resolution));
  for (const auto& s : ds.samples) {
    if (s.force.size() != ds.resolution || s.mu.size() != d || s.response.size() != ds.channels * ds.resolution) {
      throw UserError("save_dataset: sample shape does not match dataset header");
    }
    flat.insert(flat.end(), s.force.begin(), s.force.end());
    flat.insert(flat.end(), s.mu.begin(), s.mu.end());
    flat.insert(flat.end(), s.response.begin(), s.response.end());
  }
  const auto bytes = diffcore::encode_f64_le(flat);
  diffcore::write_bytes(dir / kDataName, bytes);

  Json m;
  m["format"] = "pdon-dataset";
  m["version"] = 1;
  m["case_id"] = std::string(to_string(ds.case_id));
  m["role"] = std::string(to_string(ds.role));
  m["n"] = ds.size();
  m["r"] = ds.resolution;
  m["c"] = ds.channels;
  m["param_dim"] = d;
  m["seed"] = ds.seed;
  m["sweep"] = detail::sweep_json(ds.sweep);
  m["grid"] = detail::grid_json(ds.grid);
  m["mu3"] = ds.cubic;
  m["normalization"] = Json{{"response_scale", ds.normalization.response_scale},
                            {"mu_lower", ds.normalization.mu_lower},
                            {"mu_upper", ds.normalization.mu_upper}};
  m["data_file"] = kDataName;
  m["crc64"] = diffcore::crc64_hex(diffcore::crc64(bytes));
  diffcore::write_json(dir / kManifestName, m);
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const Json m = diffcore::read_json(dir / kManifestName);
  Dataset ds;
  std::size_t n = 0;
  std::string data_file;
  std::string crc;
  try {
    if (m.at("format").get<std::string>() != "pdon-dataset") throw FormatError("manifest: unexpected format tag");
    ds.case_id = case_from_string(m.at("case_id").get<std::string>());
    ds.role = role_from_string(m.at("role").get<std::string>());
    n = m.at("n").get<std::size_t>();
    ds.resolution = m.at("r").get<std::size_t>();
    ds.channels = m.at("c").get<std::size_t>();
    ds.param_dim = m.at("param_dim").get<std::size_t>();
    ds.seed = m.at("seed").get<std::uint64_t>();
    const Json& s = m.at("sweep");
    ds.sweep = {s.at("amplitude").get<double>(), s.at("f_low").get<double>(), s.at("f_up").get<double>(),
                s.at("duration").get<double>()};
    const Json& g = m.at("grid");
    ds.grid = {g.at("dt").get<double>(), g.at("samples").get<std::size_t>(), g.at("substeps").get<std::size_t>()};
    ds.cubic = m.at("mu3").get<double>();
    const Json& nm = m.at("normalization");
    ds.normalization = {nm.at("response_scale").get<std::vector<double>>(), nm.at("mu_lower").get<std::vector<double>>(),
                        nm.at("mu_upper").get<std::vector<double>>()};
    data_file = m.at("data_file").get<std::string>();
    crc = m.at("crc64").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed dataset manifest in '" + dir.string() + "': " + e.what());
  } catch (const FormatError&) {
    throw;
  } catch (const UserError& e) {
    throw FormatError(std::string("malformed dataset manifest: ") + e.what());
  }
  if (n == 0 || ds.resolution == 0 || ds.channels == 0 || ds.param_dim == 0) {
    throw FormatError("manifest: n, r, c and param_dim must be positive");
  }
  if (ds.normalization.response_scale.size() != ds.channels || ds.normalization.mu_lower.size() != ds.param_dim) {
    throw FormatError("manifest: normalization record does not match c / param_dim");
  }
  ds.normalization.validate();

  const auto bytes = diffcore::read_bytes(dir / data_file);
  const std::size_t row = ds.resolution + ds.param_dim + ds.channels * ds.resolution;
  if (bytes.size() != n * row * 8) {
    std::ostringstream os;
    os << "dataset binary holds " << bytes.size() << " bytes, manifest implies " << n * row * 8 << " (n=" << n
       << ", r=" << ds.resolution << ", c=" << ds.channels << ")";
    throw FormatError(os.str());
  }
  if (diffcore::crc64_hex(diffcore::crc64(bytes)) != crc) throw FormatError("dataset checksum mismatch");
  const auto flat = diffcore::decode_f64_le(bytes);
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto it = flat.begin() + static_cast<std::ptrdiff_t>(i * row);
    SampleTriple s;
    s.force.assign(it, it + static_cast<std::ptrdiff_t>(ds.resolution));
    it += static_cast<std::ptrdiff_t>(ds.resolution);
    s.mu.assign(it, it + static_cast<std::ptrdiff_t>(ds.param_dim));
    it += static_cast<std::ptrdiff_t>(ds.param_dim);
    s.response.assign(it, it + static_cast<std::ptrdiff_t>(ds.channels * ds.resolution));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace pdon::datagen
