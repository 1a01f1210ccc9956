#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "pdon/diffcore/checkpoint.hpp"
#include "pdon/error.hpp"
#include "pdon/models/encoding.hpp"

namespace pdon::models {

using diffcore::Json;

enum class Arch { parametric_ld, parametric_nd, vanilla, mlp };

inline std::string_view to_string(Arch a) {
  switch (a) {
    case Arch::parametric_ld: return "parametric-ld";
    case Arch::parametric_nd: return "parametric-nd";
    case Arch::vanilla: return "vanilla";
    case Arch::mlp: return "mlp";
  }
  return "?";
}

inline Arch arch_from_string(std::string_view s) {
  if (s == "parametric-ld" || s == "ld") return Arch::parametric_ld;
  if (s == "parametric-nd" || s == "nd") return Arch::parametric_nd;
  if (s == "vanilla") return Arch::vanilla;
  if (s == "mlp") return Arch::mlp;
  throw UserError("unknown architecture '" + std::string(s) + "' (expected parametric-ld, parametric-nd, vanilla, mlp)");
}

/// Configuration family: the Duffing oscillator cases or the multi-channel layout.
enum class Family { duffing, mdof };

inline Family family_from_string(std::string_view s) {
  if (s == "duffing" || s == "1a" || s == "1b" || s == "1c" || s == "1d" || s == "case1") return Family::duffing;
  if (s == "mdof" || s == "case2") return Family::mdof;
  throw UserError("unknown configuration family '" + std::string(s) + "'");
}

/// Layer sizes and coordinate handling of one surrogate. Unused network
/// lists stay empty (e.g. `param` for vanilla, everything but `mlp` for the MLP).
struct NetworkSpec {
  Arch arch = Arch::parametric_nd;
  std::vector<std::size_t> branch;
  std::vector<std::size_t> param;
  std::vector<std::size_t> trunk;
  std::vector<std::size_t> decoder;
  std::vector<std::size_t> mlp;
  std::size_t pe_order = 10;  // 0: trunk takes the raw time coordinate
  double pe_period = 2.0;
  double time_span = 2.0;  // channel c occupies coordinates [c·span, (c+1)·span)
  std::size_t channels = 1;
  std::size_t resolution = 200;
  std::size_t param_dim = 2;

  bool uses_pe() const { return pe_order > 0; }
  PositionalEncoder encoder() const { return PositionalEncoder{pe_order, pe_period}; }
  std::size_t trunk_input() const { return uses_pe() ? 2 * pe_order : 1; }

  void validate() const {
    auto need = [](bool ok, const std::string& what) {
      if (!ok) throw UserError("network spec: " + what);
    };
    need(channels >= 1 && resolution >= 1 && param_dim >= 1, "channels, resolution and param_dim must be positive");
    if (uses_pe()) encoder().validate();
    switch (arch) {
      case Arch::parametric_ld:
      case Arch::parametric_nd:
        need(branch.size() >= 2 && param.size() >= 2 && trunk.size() >= 2, "branch/param/trunk need >= 2 sizes");
        need(branch.front() == resolution, "branch input must equal resolution");
        need(param.front() == param_dim, "parameter-net input must equal param_dim");
        need(trunk.front() == trunk_input(), "trunk input must equal the encoded coordinate width");
        need(branch.back() == param.back() && branch.back() == trunk.back(), "branch/param/trunk widths differ");
        if (arch == Arch::parametric_nd) {
          need(decoder.size() >= 2, "nonlinear decoder needs >= 2 sizes");
          need(decoder.front() == channels * resolution && decoder.back() == channels * resolution,
               "decoder must map c·r to c·r");
        } else {
          need(decoder.empty(), "linear decoder has no network");
        }
        break;
      case Arch::vanilla:
        need(branch.size() >= 2 && trunk.size() >= 2, "branch/trunk need >= 2 sizes");
        need(branch.front() == resolution + param_dim, "vanilla branch input must equal r + dim(mu)");
        need(trunk.front() == trunk_input(), "trunk input must equal the encoded coordinate width");
        need(branch.back() == trunk.back(), "branch/trunk widths differ");
        break;
      case Arch::mlp:
        need(mlp.size() >= 2, "mlp needs >= 2 sizes");
        need(mlp.front() == resolution + param_dim, "mlp input must equal r + dim(mu)");
        need(mlp.back() == channels * resolution, "mlp output must equal c·r");
        break;
    }
  }

  Json to_json() const {
    return Json{{"arch", std::string(to_string(arch))},
                {"branch", branch},
                {"param", param},
                {"trunk", trunk},
                {"decoder", decoder},
                {"mlp", mlp},
                {"pe_order", pe_order},
                {"pe_period", pe_period},
                {"time_span", time_span},
                {"channels", channels},
                {"resolution", resolution},
                {"param_dim", param_dim}};
  }

  static NetworkSpec from_json(const Json& j) {
    try {
      NetworkSpec s;
      s.arch = arch_from_string(j.at("arch").get<std::string>());
      s.branch = j.at("branch").get<std::vector<std::size_t>>();
      s.param = j.at("param").get<std::vector<std::size_t>>();
      s.trunk = j.at("trunk").get<std::vector<std::size_t>>();
      s.decoder = j.at("decoder").get<std::vector<std::size_t>>();
      s.mlp = j.at("mlp").get<std::vector<std::size_t>>();
      s.pe_order = j.at("pe_order").get<std::size_t>();
      s.pe_period = j.at("pe_period").get<double>();
      s.time_span = j.at("time_span").get<double>();
      s.channels = j.at("channels").get<std::size_t>();
      s.resolution = j.at("resolution").get<std::size_t>();
      s.param_dim = j.at("param_dim").get<std::size_t>();
      s.validate();
      return s;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("network spec: ") + e.what());
    }
  }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Hidden width of the dense nonlinear decoder used for single-channel models.
inline constexpr std::size_t kDecoderHidden = 400;

/// Tuned layer sizes per architecture. Duffing: r = 200, dim(μ) = 2, T = 2 s,
/// PE order 10. MDOF layout: r = 200, c = 4, dim(μ) = 6, PE order 50.
inline NetworkSpec default_config(Arch arch, Family family) {
  NetworkSpec s;
  s.arch = arch;
  if (family == Family::duffing) {
    s.resolution = 200;
    s.channels = 1;
    s.param_dim = 2;
    s.time_span = 2.0;
    s.pe_period = 2.0;
    s.pe_order = 10;
    switch (arch) {
      case Arch::parametric_ld:
        s.branch = {200, 200, 200, 200, 200};
        s.param = {2, 200, 200, 200, 200};
        s.trunk = {20, 200, 200, 200, 200};
        break;
      case Arch::parametric_nd:
        s.branch = {200, 300, 300};
        s.param = {2, 300, 300};
        s.trunk = {20, 300, 300};
        s.decoder = {200, kDecoderHidden, 200};
        break;
      case Arch::vanilla:
        // Raw time coordinate; the trunk ends at 200 to match the branch width.
        s.pe_order = 0;
        s.branch = {202, 300, 300, 300, 200};
        s.trunk = {1, 300, 300, 300, 200};
        break;
      case Arch::mlp:
        s.mlp = {202, 400, 400, 200};
        break;
    }
  } else {
    s.resolution = 200;
    s.channels = 4;
    s.param_dim = 6;
    s.time_span = 1.0;
    s.pe_order = 50;
    s.pe_period = 4.0;
    switch (arch) {
      case Arch::parametric_ld:
        s.branch = {200, 300, 300, 300, 300};
        s.param = {6, 300, 300, 300, 300};
        s.trunk = {100, 300, 300, 300, 300};
        break;
      case Arch::parametric_nd:
        throw UserError("default_config: the convolutional multi-channel decoder is not provided");
      case Arch::vanilla:
        s.branch = {206, 300, 300, 300, 200};
        s.trunk = {100, 300, 300, 300, 200};
        break;
      case Arch::mlp:
        s.mlp = {206, 500, 500, 500, 500, 500, 500, 800};
        break;
    }
  }
  s.validate();
  return s;
}

}  // namespace pdon::models
