#pragma once

// Run configuration: one JSON document whose keys mirror the CLI flags.
// Unknown keys are rejected so that typos fail loudly.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "pdon/diffcore/checkpoint.hpp"
#include "pdon/error.hpp"
#include "pdon/forward/train.hpp"
#include "pdon/inverse/refinement.hpp"

namespace pdon::evalcli {

using diffcore::Json;

inline constexpr const char* kOutputRootEnv = "PDON_OUTPUT_ROOT";

struct RunConfig {
  std::string case_id = "1a";
  std::string role = "train";
  std::string arch = "parametric-nd";
  std::uint64_t seed = 0;
  std::string output;  // empty: $PDON_OUTPUT_ROOT, then "pdon-out"

  // Inputs.
  std::string train_data;
  std::string test_data;
  std::string model;
  std::string init;
  std::string refine;

  // Data generation.
  std::size_t n = 100;
  double cubic = 1e4;
  std::size_t substeps = 10;

  forward::TrainConfig train;
  inverse::InitConfig inversion;
  inverse::RefineConfig refinement;
  bool all_restarts = true;  // train the correction on every restart endpoint

  std::vector<std::size_t> factors{1, 2, 4};
  std::size_t grid_n = 50;

  std::filesystem::path output_root() const {
    if (!output.empty()) return output;
    if (const char* env = std::getenv(kOutputRootEnv); env != nullptr && *env != '\0') return env;
    return "pdon-out";
  }
};

namespace detail {

inline void reject_unknown(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw UserError("config: '" + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) throw UserError("config: unknown key '" + where + key + "'");
  }
}

template <typename T>
void read(const Json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace detail

/// Overlays the keys present in `j` onto `cfg`.
inline void apply_config(const Json& j, RunConfig& cfg) {
  using detail::read;
  try {
    detail::reject_unknown(j,
                           {"case", "role", "arch", "seed", "output", "data", "model", "init", "refine_model",
                            "generate", "train", "inversion", "refinement", "superres", "pca"},
                           "");
    read(j, "case", cfg.case_id);
    read(j, "role", cfg.role);
    read(j, "arch", cfg.arch);
    read(j, "seed", cfg.seed);
    read(j, "output", cfg.output);
    read(j, "model", cfg.model);
    read(j, "init", cfg.init);
    read(j, "refine_model", cfg.refine);
    if (j.contains("data")) {
      const Json& d = j.at("data");
      detail::reject_unknown(d, {"train", "test"}, "data.");
      read(d, "train", cfg.train_data);
      read(d, "test", cfg.test_data);
    }
    if (j.contains("generate")) {
      const Json& g = j.at("generate");
      detail::reject_unknown(g, {"n", "cubic", "substeps"}, "generate.");
      read(g, "n", cfg.n);
      read(g, "cubic", cfg.cubic);
      read(g, "substeps", cfg.substeps);
    }
    if (j.contains("train")) {
      const Json& t = j.at("train");
      detail::reject_unknown(t, {"epochs", "batch_size", "learning_rate", "optimizer", "eval_every", "patience"},
                             "train.");
      read(t, "epochs", cfg.train.epochs);
      read(t, "batch_size", cfg.train.batch_size);
      read(t, "learning_rate", cfg.train.learning_rate);
      read(t, "eval_every", cfg.train.eval_every);
      read(t, "patience", cfg.train.patience);
      if (t.contains("optimizer")) cfg.train.optimizer = diffcore::optimizer_from_string(t.at("optimizer").get<std::string>());
    }
    if (j.contains("inversion")) {
      const Json& t = j.at("inversion");
      detail::reject_unknown(t, {"epochs", "restarts", "learning_rate"}, "inversion.");
      read(t, "epochs", cfg.inversion.epochs);
      read(t, "restarts", cfg.inversion.restarts);
      read(t, "learning_rate", cfg.inversion.learning_rate);
    }
    if (j.contains("refinement")) {
      const Json& t = j.at("refinement");
      detail::reject_unknown(
          t, {"epochs", "iterations", "batch_size", "learning_rate", "hidden", "clip_gradient", "all_restarts"},
          "refinement.");
      read(t, "epochs", cfg.refinement.epochs);
      read(t, "iterations", cfg.refinement.iterations);
      read(t, "batch_size", cfg.refinement.batch_size);
      read(t, "learning_rate", cfg.refinement.learning_rate);
      read(t, "hidden", cfg.refinement.hidden);
      read(t, "clip_gradient", cfg.refinement.clip_gradient);
      read(t, "all_restarts", cfg.all_restarts);
    }
    if (j.contains("superres")) {
      detail::reject_unknown(j.at("superres"), {"factors"}, "superres.");
      read(j.at("superres"), "factors", cfg.factors);
    }
    if (j.contains("pca")) {
      detail::reject_unknown(j.at("pca"), {"grid_n"}, "pca.");
      read(j.at("pca"), "grid_n", cfg.grid_n);
    }
  } catch (const nlohmann::json::exception& e) {
    throw UserError(std::string("config: ") + e.what());
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  RunConfig cfg;
  Json j;
  try {
    j = diffcore::read_json(path);
  } catch (const FormatError& e) {
    throw UserError(e.what());
  }
  apply_config(j, cfg);
  return cfg;
}

/// Fails early when an input the stage needs does not exist.
inline void require_path(const std::string& path, const char* what) {
  if (path.empty()) throw UserError(std::string("missing required input: ") + what);
  if (!std::filesystem::exists(path)) throw UserError(std::string(what) + " '" + path + "' does not exist");
}

}  // namespace pdon::evalcli
