#pragma once

// Forward surrogates mapping (force samples f, normalized parameters μ,
// time coordinates t) to responses. Output rows are samples; columns are
// channel-major, i.e. column ch·|t| + j holds channel ch at t_j.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pdon/diffcore/checkpoint.hpp"
#include "pdon/diffcore/dense.hpp"
#include "pdon/diffcore/tape.hpp"
#include "pdon/error.hpp"
#include "pdon/models/config.hpp"
#include "pdon/random.hpp"

namespace pdon::models {

using diffcore::DenseNetwork;
using diffcore::Matrix;
using diffcore::Tape;
using diffcore::Var;

/// One flat gradient buffer per network, in Surrogate::networks() order.
using GradBuffers = std::vector<std::vector<double>>;

/// A frozen surrogate bound to fixed forces and a fixed time grid, for
/// repeated queries in μ (parameter estimation, grid search).
class ConditionedSurrogate {
 public:
  virtual ~ConditionedSurrogate() = default;
  virtual std::size_t rows() const = 0;
  virtual Var record(Tape& tape, Var mu) const = 0;
  virtual Matrix predict(const Matrix& mu) const = 0;
};

class Surrogate {
 public:
  explicit Surrogate(NetworkSpec spec) : spec_(std::move(spec)) { spec_.validate(); }
  virtual ~Surrogate() = default;

  const NetworkSpec& spec() const { return spec_; }
  Arch arch() const { return spec_.arch; }
  std::size_t resolution() const { return spec_.resolution; }
  std::size_t channels() const { return spec_.channels; }
  std::size_t param_dim() const { return spec_.param_dim; }

  virtual std::vector<std::string> network_names() const = 0;
  virtual std::vector<DenseNetwork*> networks() = 0;
  virtual std::vector<const DenseNetwork*> networks() const = 0;

  /// Whether the model can be queried on a grid other than the training resolution.
  virtual bool resolution_free() const = 0;

  /// Deterministic evaluation; each output entry is independent of batch
  /// composition and of the other grid points queried.
  virtual Matrix predict(const Matrix& forces, const Matrix& mu, std::span<const double> t_grid) const = 0;

  /// Records the forward pass. A null `grads` evaluates with frozen weights.
  virtual Var record(Tape& tape, const Matrix& forces, Var mu, std::span<const double> t_grid,
                     GradBuffers* grads) const = 0;

  virtual std::unique_ptr<ConditionedSurrogate> condition(const Matrix& forces, std::span<const double> t_grid) const;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* net : networks()) n += net->parameter_count();
    return n;
  }

  GradBuffers zero_grads() const {
    GradBuffers g;
    for (const auto* net : networks()) g.emplace_back(net->parameter_count(), 0.0);
    return g;
  }

 protected:
  void check_inputs(const Matrix& forces, const Matrix& mu, std::span<const double> t_grid) const {
    if (static_cast<std::size_t>(forces.cols()) != spec_.resolution) {
      throw UserError("surrogate: force length " + std::to_string(forces.cols()) + " != resolution " +
                      std::to_string(spec_.resolution));
    }
    if (static_cast<std::size_t>(mu.cols()) != spec_.param_dim) {
      throw UserError("surrogate: parameter dimension " + std::to_string(mu.cols()) + " != " +
                      std::to_string(spec_.param_dim));
    }
    if (forces.rows() != mu.rows()) throw UserError("surrogate: force and parameter batch sizes differ");
    if (t_grid.empty()) throw UserError("surrogate: empty time grid");
    if (!resolution_free() && t_grid.size() != spec_.resolution) {
      throw UserError("surrogate: " + std::string(to_string(spec_.arch)) +
                      " requires the training resolution " + std::to_string(spec_.resolution) + ", got " +
                      std::to_string(t_grid.size()) + " query points");
    }
  }

  /// Trunk inputs for every (channel, time) pair; channel ch is shifted by ch·time_span.
  Matrix trunk_inputs(std::span<const double> t_grid) const {
    const auto m = static_cast<Eigen::Index>(t_grid.size());
    const auto rows = m * static_cast<Eigen::Index>(spec_.channels);
    Matrix x(rows, static_cast<Eigen::Index>(spec_.trunk_input()));
    const PositionalEncoder enc = spec_.encoder();
    for (std::size_t ch = 0; ch < spec_.channels; ++ch) {
      for (Eigen::Index j = 0; j < m; ++j) {
        const double coord = t_grid[static_cast<std::size_t>(j)] + static_cast<double>(ch) * spec_.time_span;
        const Eigen::Index row = static_cast<Eigen::Index>(ch) * m + j;
        if (spec_.uses_pe()) {
          enc.encode_into(coord, x.row(row).data());
        } else {
          x(row, 0) = coord;
        }
      }
    }
    return x;
  }

  static Matrix concat(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), a.cols() + b.cols());
    out.leftCols(a.cols()) = a;
    out.rightCols(b.cols()) = b;
    return out;
  }

  /// Σ_k coeff(i,k)·basis(j,k) with a batch-independent summation order.
  static Matrix contract(const Matrix& coeff, const Matrix& basis) {
    Matrix out(coeff.rows(), basis.rows());
    const auto n = static_cast<std::size_t>(coeff.cols());
    for (Eigen::Index i = 0; i < coeff.rows(); ++i) {
      for (Eigen::Index j = 0; j < basis.rows(); ++j) {
        out(i, j) = diffcore::kernel::dot(coeff.row(i).data(), basis.row(j).data(), n);
      }
    }
    return out;
  }

  static std::span<double> sink(GradBuffers* grads, std::size_t k) {
    return grads == nullptr ? std::span<double>() : std::span<double>((*grads)[k]);
  }

  NetworkSpec spec_;
};

namespace detail {

class GenericConditioned : public ConditionedSurrogate {
 public:
  GenericConditioned(const Surrogate& model, Matrix forces, std::vector<double> grid)
      : model_(model), forces_(std::move(forces)), grid_(std::move(grid)) {}

  std::size_t rows() const override { return static_cast<std::size_t>(forces_.rows()); }
  Var record(Tape& tape, Var mu) const override { return model_.record(tape, forces_, mu, grid_, nullptr); }
  Matrix predict(const Matrix& mu) const override { return model_.predict(forces_, mu, grid_); }

 private:
  const Surrogate& model_;
  Matrix forces_;
  std::vector<double> grid_;
};

}  // namespace detail

inline std::unique_ptr<ConditionedSurrogate> Surrogate::condition(const Matrix& forces,
                                                                  std::span<const double> t_grid) const {
  return std::make_unique<detail::GenericConditioned>(*this, forces,
                                                      std::vector<double>(t_grid.begin(), t_grid.end()));
}

/// Branch, parameter and trunk nets combined by Σ_k b_k(f) p_k(μ) τ_k(γ(t)),
/// optionally followed by a dense nonlinear decoder over the full response vector.
class ParametricDeepONet : public Surrogate {
 public:
  ParametricDeepONet(NetworkSpec spec, DenseNetwork branch, DenseNetwork param, DenseNetwork trunk,
                     DenseNetwork decoder = {})
      : Surrogate(std::move(spec)),
        branch_(std::move(branch)),
        param_(std::move(param)),
        trunk_(std::move(trunk)),
        decoder_(std::move(decoder)) {
    if (branch_.dims() != spec_.branch || param_.dims() != spec_.param || trunk_.dims() != spec_.trunk) {
      throw UserError("ParametricDeepONet: sub-network sizes do not match the network spec");
    }
    if (has_decoder() && decoder_.dims() != spec_.decoder) {
      throw UserError("ParametricDeepONet: decoder sizes do not match the network spec");
    }
  }

  bool has_decoder() const { return spec_.arch == Arch::parametric_nd; }
  std::size_t latent_width() const { return spec_.branch.back(); }

  const DenseNetwork& branch() const { return branch_; }
  const DenseNetwork& param_net() const { return param_; }
  const DenseNetwork& trunk() const { return trunk_; }
  const DenseNetwork& decoder() const { return decoder_; }

  std::vector<std::string> network_names() const override {
    if (has_decoder()) return {"branch", "param", "trunk", "decoder"};
    return {"branch", "param", "trunk"};
  }
  std::vector<DenseNetwork*> networks() override {
    if (has_decoder()) return {&branch_, &param_, &trunk_, &decoder_};
    return {&branch_, &param_, &trunk_};
  }
  std::vector<const DenseNetwork*> networks() const override {
    if (has_decoder()) return {&branch_, &param_, &trunk_, &decoder_};
    return {&branch_, &param_, &trunk_};
  }

  bool resolution_free() const override { return !has_decoder(); }

  /// Linear-decoder response before any nonlinear decoding.
  Matrix predict_linear(const Matrix& forces, const Matrix& mu, std::span<const double> t_grid) const {
    Matrix b = branch_.forward_rows(forces);
    Matrix p = param_.forward_rows(mu);
    Matrix tau = trunk_.forward_rows(trunk_inputs(t_grid));
    return contract(b.cwiseProduct(p), tau);
  }

  Matrix predict(const Matrix& forces, const Matrix& mu, std::span<const double> t_grid) const override {
    check_inputs(forces, mu, t_grid);
    Matrix ld = predict_linear(forces, mu, t_grid);
    return has_decoder() ? decoder_.forward_rows(ld) : ld;
  }

  Var record(Tape& tape, const Matrix& forces, Var mu, std::span<const double> t_grid,
             GradBuffers* grads) const override {
    check_inputs(forces, tape.value(mu), t_grid);
    Var b = branch_.forward(tape, tape.constant(forces), sink(grads, 0));
    Var p = param_.forward(tape, mu, sink(grads, 1));
    Var tau = trunk_.forward(tape, tape.constant(trunk_inputs(t_grid)), sink(grads, 2));
    Var y = tape.matmul_nt(tape.mul(b, p), tau);
    if (has_decoder()) y = decoder_.forward(tape, y, sink(grads, 3));
    return y;
  }

  std::unique_ptr<ConditionedSurrogate> condition(const Matrix& forces, std::span<const double> t_grid) const override;

 private:
  DenseNetwork branch_;
  DenseNetwork param_;
  DenseNetwork trunk_;
  DenseNetwork decoder_;
};

namespace detail {

// Branch and trunk outputs do not depend on μ, so they are evaluated once.
class ParametricConditioned : public ConditionedSurrogate {
 public:
  ParametricConditioned(const ParametricDeepONet& model, Matrix branch_out, Matrix trunk_out)
      : model_(model), branch_out_(std::move(branch_out)), trunk_out_(std::move(trunk_out)) {}

  std::size_t rows() const override { return static_cast<std::size_t>(branch_out_.rows()); }

  Var record(Tape& tape, Var mu) const override {
    if (tape.value(mu).rows() != branch_out_.rows()) throw UserError("conditioned surrogate: batch size mismatch");
    Var p = model_.param_net().forward(tape, mu);
    Var y = tape.matmul_nt(tape.mul(tape.constant(branch_out_), p), tape.constant(trunk_out_));
    if (model_.has_decoder()) y = model_.decoder().forward(tape, y);
    return y;
  }

  Matrix predict(const Matrix& mu) const override {
    if (mu.rows() != branch_out_.rows()) throw UserError("conditioned surrogate: batch size mismatch");
    Matrix p = model_.param_net().forward_rows(mu);
    Matrix ld(mu.rows(), trunk_out_.rows());
    const auto n = static_cast<std::size_t>(p.cols());
    std::vector<double> bp(n);
    for (Eigen::Index i = 0; i < mu.rows(); ++i) {
      for (std::size_t k = 0; k < n; ++k) bp[k] = branch_out_(i, static_cast<Eigen::Index>(k)) * p(i, static_cast<Eigen::Index>(k));
      for (Eigen::Index j = 0; j < trunk_out_.rows(); ++j) {
        ld(i, j) = diffcore::kernel::dot(bp.data(), trunk_out_.row(j).data(), n);
      }
    }
    return model_.has_decoder() ? model_.decoder().forward_rows(ld) : ld;
  }

 private:
  const ParametricDeepONet& model_;
  Matrix branch_out_;
  Matrix trunk_out_;
};

}  // namespace detail

inline std::unique_ptr<ConditionedSurrogate> ParametricDeepONet::condition(const Matrix& forces,
                                                                          std::span<const double> t_grid) const {
  check_inputs(forces, Matrix::Zero(forces.rows(), static_cast<Eigen::Index>(spec_.param_dim)), t_grid);
  return std::make_unique<detail::ParametricConditioned>(*this, branch_.forward_rows(forces),
                                                         trunk_.forward_rows(trunk_inputs(t_grid)));
}

/// Branch over concat(f, μ), trunk over the time coordinate, dot-product output.
class VanillaDeepONet : public Surrogate {
 public:
  VanillaDeepONet(NetworkSpec spec, DenseNetwork branch, DenseNetwork trunk)
      : Surrogate(std::move(spec)), branch_(std::move(branch)), trunk_(std::move(trunk)) {
    if (branch_.dims() != spec_.branch || trunk_.dims() != spec_.trunk) {
      throw UserError("VanillaDeepONet: sub-network sizes do not match the network spec");
    }
  }

  const DenseNetwork& branch() const { return branch_; }
  const DenseNetwork& trunk() const { return trunk_; }

  std::vector<std::string> network_names() const override { return {"branch", "trunk"}; }
  std::vector<DenseNetwork*> networks() override { return {&branch_, &trunk_}; }
  std::vector<const DenseNetwork*> networks() const override { return {&branch_, &trunk_}; }
  bool resolution_free() const override { return true; }

  Matrix predict(const Matrix& forces, const Matrix& mu, std::span<const double> t_grid) const override {
    check_inputs(forces, mu, t_grid);
    Matrix b = branch_.forward_rows(concat(forces, mu));
    Matrix tau = trunk_.forward_rows(trunk_inputs(t_grid));
    return contract(b, tau);
  }

  Var record(Tape& tape, const Matrix& forces, Var mu, std::span<const double> t_grid,
             GradBuffers* grads) const override {
    check_inputs(forces, tape.value(mu), t_grid);
    Var in = tape.concat_cols(tape.constant(forces), mu);
    Var b = branch_.forward(tape, in, sink(grads, 0));
    Var tau = trunk_.forward(tape, tape.constant(trunk_inputs(t_grid)), sink(grads, 1));
    return tape.matmul_nt(b, tau);
  }

 private:
  DenseNetwork branch_;
  DenseNetwork trunk_;
};

/// Dense map from concat(f, μ) to the full fixed-resolution response.
class MlpBaseline : public Surrogate {
 public:
  MlpBaseline(NetworkSpec spec, DenseNetwork net) : Surrogate(std::move(spec)), net_(std::move(net)) {
    if (net_.dims() != spec_.mlp) throw UserError("MlpBaseline: layer sizes do not match the network spec");
  }

  const DenseNetwork& net() const { return net_; }

  std::vector<std::string> network_names() const override { return {"mlp"}; }
  std::vector<DenseNetwork*> networks() override { return {&net_}; }
  std::vector<const DenseNetwork*> networks() const override { return {&net_}; }
  bool resolution_free() const override { return false; }

  Matrix predict(const Matrix& forces, const Matrix& mu, std::span<const double> t_grid) const override {
    check_inputs(forces, mu, t_grid);
    return net_.forward_rows(concat(forces, mu));
  }

  Var record(Tape& tape, const Matrix& forces, Var mu, std::span<const double> t_grid,
             GradBuffers* grads) const override {
    check_inputs(forces, tape.value(mu), t_grid);
    return net_.forward(tape, tape.concat_cols(tape.constant(forces), mu), sink(grads, 0));
  }

 private:
  DenseNetwork net_;
};

/// Builds a surrogate from pre-made networks in network_names() order.
inline std::unique_ptr<Surrogate> assemble(const NetworkSpec& spec, std::vector<DenseNetwork> nets) {
  auto take = [&](std::size_t k) { return std::move(nets.at(k)); };
  switch (spec.arch) {
    case Arch::parametric_ld:
      if (nets.size() != 3) throw UserError("assemble: parametric-ld needs 3 networks");
      return std::make_unique<ParametricDeepONet>(spec, take(0), take(1), take(2));
    case Arch::parametric_nd:
      if (nets.size() != 4) throw UserError("assemble: parametric-nd needs 4 networks");
      return std::make_unique<ParametricDeepONet>(spec, take(0), take(1), take(2), take(3));
    case Arch::vanilla:
      if (nets.size() != 2) throw UserError("assemble: vanilla needs 2 networks");
      return std::make_unique<VanillaDeepONet>(spec, take(0), take(1));
    case Arch::mlp:
      if (nets.size() != 1) throw UserError("assemble: mlp needs 1 network");
      return std::make_unique<MlpBaseline>(spec, take(0));
  }
  throw UserError("assemble: unknown architecture");
}

/// Freshly initialized surrogate; sub-network k is seeded from derive_seed(seed, k).
inline std::unique_ptr<Surrogate> make_surrogate(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<std::vector<std::size_t>> layouts;
  switch (spec.arch) {
    case Arch::parametric_ld: layouts = {spec.branch, spec.param, spec.trunk}; break;
    case Arch::parametric_nd: layouts = {spec.branch, spec.param, spec.trunk, spec.decoder}; break;
    case Arch::vanilla: layouts = {spec.branch, spec.trunk}; break;
    case Arch::mlp: layouts = {spec.mlp}; break;
  }
  std::vector<DenseNetwork> nets;
  for (std::size_t k = 0; k < layouts.size(); ++k) nets.push_back(diffcore::init_weights(layouts[k], derive_seed(seed, k)));
  return assemble(spec, std::move(nets));
}

/// Writes `<path>` (JSON) and a sidecar `.bin` holding every network's weights back to back.
inline void save_surrogate(const Surrogate& model, const std::filesystem::path& json_path) {
  std::vector<double> all;
  Json nets = Json::array();
  const auto names = model.network_names();
  const auto list = model.networks();
  for (std::size_t k = 0; k < list.size(); ++k) {
    Json d = diffcore::describe(*list[k], all.size());
    d["name"] = names[k];
    nets.push_back(d);
    all.insert(all.end(), list[k]->weights().begin(), list[k]->weights().end());
  }
  auto bin_path = std::filesystem::path(json_path).replace_extension(".bin");
  auto bytes = diffcore::encode_f64_le(all);
  diffcore::write_bytes(bin_path, bytes);
  Json j;
  j["format"] = "pdon-model";
  j["version"] = 1;
  j["model"] = model.spec().to_json();
  j["model"]["decoder_kind"] = model.arch() == Arch::parametric_nd ? "nonlinear" : "linear";
  j["model"]["latent_width"] = model.arch() == Arch::mlp ? 0 : model.spec().branch.back();
  j["networks"] = nets;
  j["weights_file"] = bin_path.filename().string();
  j["crc64"] = diffcore::crc64_hex(diffcore::crc64(bytes));
  diffcore::write_json(json_path, j);
}

inline std::unique_ptr<Surrogate> load_surrogate(const std::filesystem::path& json_path) {
  Json j = diffcore::read_json(json_path);
  if (j.value("format", std::string()) != "pdon-model") throw FormatError("'" + json_path.string() + "' is not a model checkpoint");
  Json spec_json = j.at("model");
  spec_json.erase("decoder_kind");
  spec_json.erase("latent_width");
  NetworkSpec spec = NetworkSpec::from_json(spec_json);
  auto weights = diffcore::load_weights_file(json_path, j);
  std::vector<DenseNetwork> nets;
  std::size_t total = 0;
  for (const auto& d : j.at("networks")) {
    nets.push_back(diffcore::restore(d, weights));
    total += nets.back().parameter_count();
  }
  if (total != weights.size()) throw FormatError("model checkpoint: weights file size does not match descriptors");
  return assemble(spec, std::move(nets));
}

}  // namespace pdon::models
