#pragma once

// Command-line front end. Each subcommand runs one pipeline stage and writes
// its artifacts under the output directory. Exit codes: 0 success, 1 user
// error, 2 numerical failure.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pdon/datagen/dataset.hpp"
#include "pdon/evalcli/config.hpp"
#include "pdon/evalcli/pca.hpp"
#include "pdon/evalcli/superres.hpp"
#include "pdon/forward/metrics.hpp"
#include "pdon/forward/train.hpp"
#include "pdon/inverse/estimate.hpp"
#include "pdon/models/surrogate.hpp"

namespace pdon::evalcli {

namespace fs = std::filesystem;

inline std::ofstream open_csv(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw UserError("cannot write '" + path.string() + "'");
  out << std::setprecision(17);
  return out;
}

inline fs::path prepare_output(const RunConfig& cfg) {
  const fs::path root = cfg.output_root();
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw UserError("cannot create output directory '" + root.string() + "': " + ec.message());
  return root;
}

inline void write_history_csv(const forward::TrainHistory& h, const fs::path& path) {
  auto out = open_csv(path);
  out << "epoch,train_loss,test_nrmse\n";
  std::size_t k = 0;
  for (std::size_t e = 1; e <= h.train_loss.size(); ++e) {
    out << e << ',' << h.train_loss[e - 1] << ',';
    if (k < h.eval_epochs.size() && h.eval_epochs[k] == e) out << h.test_nrmse[k++];
    out << '\n';
  }
}

inline void write_eval_csv(const forward::Evaluation& ev, const fs::path& path) {
  auto out = open_csv(path);
  out << "sample,nrmse\n";
  for (std::size_t i = 0; i < ev.per_sample.size(); ++i) out << i << ',' << ev.per_sample[i] << '\n';
  out << "aggregate," << ev.aggregate << '\n';
}

inline void run_gen_data(const RunConfig& cfg, std::ostream& log) {
  datagen::GenerateOptions o;
  o.case_id = datagen::case_from_string(cfg.case_id);
  o.role = datagen::role_from_string(cfg.role);
  o.n = cfg.n;
  o.cubic = cfg.cubic;
  o.grid.substeps = cfg.substeps;
  o.seed = cfg.seed;
  const fs::path dir = cfg.output_root();
  datagen::save_dataset(datagen::generate_dataset(o), dir);
  log << "wrote " << o.n << " samples to " << dir.string() << '\n';
}

inline void run_train_forward(const RunConfig& cfg, std::ostream& log) {
  require_path(cfg.train_data, "training dataset");
  if (!cfg.test_data.empty()) require_path(cfg.test_data, "test dataset");
  const fs::path out = prepare_output(cfg);
  const datagen::Dataset train = datagen::load_dataset(cfg.train_data);
  std::optional<datagen::Dataset> test;
  if (!cfg.test_data.empty()) test = datagen::load_dataset(cfg.test_data);
  const auto family = train.channels == 1 ? models::Family::duffing : models::Family::mdof;
  auto model = models::make_surrogate(models::default_config(models::arch_from_string(cfg.arch), family), cfg.seed);
  forward::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  const auto h = forward::train_forward(*model, train, tc, test ? &*test : nullptr,
                                        [&](std::size_t e, double loss, double t) {
                                          if (!std::isnan(t)) log << "epoch " << e << " train " << loss << " test " << t << '\n';
                                        });
  models::save_surrogate(*model, out / "model.json");
  write_history_csv(h, out / "history.csv");
  log << "best epoch " << h.best_epoch << " train loss " << h.best_loss << '\n';
}

inline void run_eval_forward(const RunConfig& cfg, std::ostream& log) {
  require_path(cfg.model, "model");
  require_path(cfg.test_data, "dataset");
  const fs::path out = prepare_output(cfg);
  const auto model = models::load_surrogate(cfg.model);
  const auto ev = forward::evaluate(*model, datagen::load_dataset(cfg.test_data));
  write_eval_csv(ev, out / "eval.csv");
  log << "aggregate nrmse " << ev.aggregate << '\n';
}

inline inverse::InitConfig init_config(const RunConfig& cfg) {
  inverse::InitConfig ic = cfg.inversion;
  ic.seed = cfg.seed;
  return ic;
}

inline void run_invert_init(const RunConfig& cfg, std::ostream& log) {
  require_path(cfg.model, "model");
  require_path(cfg.test_data, "dataset");
  const fs::path out = prepare_output(cfg);
  const auto model = models::load_surrogate(cfg.model);
  const auto ds = datagen::load_dataset(cfg.test_data);
  const auto init = inverse::gradient_init(*model, ds.forces(), ds.normalized_responses(), ds.time_grid(), init_config(cfg));
  inverse::save_init(init, out / "init.json");
  const auto summary = inverse::estimate(*model, ds, init_config(cfg), nullptr, &init);
  inverse::write_estimates_csv(summary, out / "init_estimates.csv");
  for (std::size_t d = 0; d < summary.init_nrmse.size(); ++d) log << "mu" << d + 1 << " nrmse " << summary.init_nrmse[d] << '\n';
}

inline void run_train_refine(const RunConfig& cfg, std::ostream& log) {
  require_path(cfg.model, "model");
  require_path(cfg.train_data, "training dataset");
  require_path(cfg.init, "initialization results");
  const fs::path out = prepare_output(cfg);
  const auto model = models::load_surrogate(cfg.model);
  const auto ds = datagen::load_dataset(cfg.train_data);
  const auto init = inverse::load_init(cfg.init);
  inverse::RefineConfig rc = cfg.refinement;
  rc.seed = cfg.seed;
  auto r = inverse::make_refinement_net(model->param_dim(), rc);
  const auto h = inverse::train_refinement(*model, r, inverse::refine_data(ds, init, cfg.all_restarts), ds.time_grid(),
                                           ds.normalization, rc);
  inverse::save_refinement(r, out / "refine.json");
  auto csv = open_csv(out / "refine_history.csv");
  csv << "epoch,loss\n0," << h.baseline_loss << '\n';
  for (std::size_t e = 0; e < h.train_loss.size(); ++e) csv << e + 1 << ',' << h.train_loss[e] << '\n';
  log << "baseline " << h.baseline_loss << " best " << h.best_loss << " at epoch " << h.best_epoch << '\n';
}

inline void run_estimate(const RunConfig& cfg, std::ostream& log) {
  require_path(cfg.model, "model");
  require_path(cfg.refine, "refinement network");
  require_path(cfg.test_data, "dataset");
  if (!cfg.init.empty()) require_path(cfg.init, "initialization results");
  const fs::path out = prepare_output(cfg);
  const auto model = models::load_surrogate(cfg.model);
  const auto r = inverse::load_refinement(cfg.refine);
  const auto ds = datagen::load_dataset(cfg.test_data);
  std::optional<std::vector<inverse::InitResult>> init;
  if (!cfg.init.empty()) init = inverse::load_init(cfg.init);
  const auto s = inverse::estimate(*model, ds, init_config(cfg), &r, init ? &*init : nullptr);
  inverse::write_estimates_csv(s, out / "estimates.csv");
  auto csv = open_csv(out / "estimate_summary.csv");
  csv << "parameter,init_nrmse,refined_nrmse\n";
  for (std::size_t d = 0; d < s.init_nrmse.size(); ++d) {
    csv << "mu" << d + 1 << ',' << s.init_nrmse[d] << ',' << s.refined_nrmse[d] << '\n';
    log << "mu" << d + 1 << " init " << s.init_nrmse[d] << " refined " << s.refined_nrmse[d] << '\n';
  }
}

inline void run_superres(const RunConfig& cfg, std::ostream& log) {
  require_path(cfg.model, "model");
  require_path(cfg.test_data, "dataset");
  const fs::path out = prepare_output(cfg);
  const auto model = models::load_surrogate(cfg.model);
  const auto res = superres_eval(*model, datagen::load_dataset(cfg.test_data), cfg.factors);
  write_superres_csv(res.rows, out / "superres.csv");
  for (const auto& row : res.rows) log << "factor " << row.factor << " nrmse " << row.nrmse << '\n';
}

inline void run_latent_pca(const RunConfig& cfg, std::ostream& log) {
  require_path(cfg.model, "model");
  const fs::path out = prepare_output(cfg);
  const auto model = models::load_surrogate(cfg.model);
  const auto* pdon = dynamic_cast<const models::ParametricDeepONet*>(model.get());
  if (pdon == nullptr) throw UserError("latent-pca: requires a parametric DeepONet model");
  // The normalization bounds of every Duffing case are the shared global box.
  const auto norm = datagen::Normalization::for_domain(datagen::case_domain(datagen::CaseId::c1a, datagen::Role::test), 1);
  const auto map = latent_pca(*pdon, norm, cfg.grid_n);
  write_pca_csv(map, out / "pca.csv");
  log << "explained variance of pc1 " << (map.explained.empty() ? 0.0 : map.explained.front()) << '\n';
}

/// Looks for --config before parsing so that file values become flag defaults.
inline RunConfig preload_config(int argc, const char* const* argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string_view a = argv[i];
    if (a == "--config" && i + 1 < argc) return load_config(argv[i + 1]);
    if (a.starts_with("--config=")) return load_config(std::string(a.substr(9)));
  }
  return RunConfig{};
}

inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  try {
    RunConfig cfg = preload_config(argc, argv);
    std::string config_path;
    std::string optimizer(diffcore::to_string(cfg.train.optimizer));

    CLI::App app{"Parametric DeepONet surrogate and inverse-estimation pipeline"};
    app.require_subcommand(1);
    app.fallthrough();
    app.option_defaults()->always_capture_default();
    app.add_option("--config", config_path, "JSON run configuration; flags override its values");
    app.add_option("--out", cfg.output, "output directory (default: $" + std::string(kOutputRootEnv) + " or pdon-out)");
    app.add_option("--seed", cfg.seed, "seed for every stochastic component");

    auto* gen = app.add_subcommand("gen-data", "simulate a Duffing dataset");
    gen->add_option("--case", cfg.case_id, "1a, 1b, 1c or 1d");
    gen->add_option("--role", cfg.role, "train or test");
    gen->add_option("--n", cfg.n, "number of samples");
    gen->add_option("--mu3", cfg.cubic, "cubic stiffness");
    gen->add_option("--substeps", cfg.substeps, "integrator steps per output interval");

    auto* train = app.add_subcommand("train-forward", "train a forward surrogate");
    train->add_option("--train", cfg.train_data, "training dataset directory");
    train->add_option("--test", cfg.test_data, "test dataset directory (optional)");
    train->add_option("--arch", cfg.arch, "parametric-nd, parametric-ld, vanilla or mlp");
    train->add_option("--epochs", cfg.train.epochs);
    train->add_option("--batch-size", cfg.train.batch_size);
    train->add_option("--lr", cfg.train.learning_rate);
    train->add_option("--optimizer", optimizer, "adam or sgd");
    train->add_option("--eval-every", cfg.train.eval_every, "test evaluation cadence in epochs");
    train->add_option("--patience", cfg.train.patience, "stop after this many epochs without improvement (0: never)");

    auto* eval = app.add_subcommand("eval-forward", "score a model on a dataset");
    eval->add_option("--model", cfg.model, "model checkpoint (.json)");
    eval->add_option("--data", cfg.test_data, "dataset directory");

    auto add_init_flags = [&](CLI::App* sub) {
      sub->add_option("--restarts", cfg.inversion.restarts);
      sub->add_option("--init-epochs", cfg.inversion.epochs);
      sub->add_option("--init-lr", cfg.inversion.learning_rate);
    };
    auto* init = app.add_subcommand("invert-init", "gradient-based parameter initialization");
    init->add_option("--model", cfg.model, "model checkpoint (.json)");
    init->add_option("--data", cfg.test_data, "dataset directory");
    add_init_flags(init);

    auto* refine = app.add_subcommand("train-refine", "train the parameter correction network");
    refine->add_option("--model", cfg.model, "model checkpoint (.json)");
    refine->add_option("--data", cfg.train_data, "training dataset directory");
    refine->add_option("--init", cfg.init, "init.json from invert-init on the same dataset");
    refine->add_option("--epochs", cfg.refinement.epochs);
    refine->add_option("--iterations", cfg.refinement.iterations, "correction steps J");
    refine->add_option("--batch-size", cfg.refinement.batch_size);
    refine->add_option("--lr", cfg.refinement.learning_rate);
    refine->add_option("--all-restarts", cfg.all_restarts, "train on every restart endpoint rather than the best one");

    auto* est = app.add_subcommand("estimate", "initialization followed by refinement");
    est->add_option("--model", cfg.model, "model checkpoint (.json)");
    est->add_option("--refine", cfg.refine, "refinement network (.json)");
    est->add_option("--data", cfg.test_data, "dataset directory");
    est->add_option("--init", cfg.init, "reuse an init.json for this dataset");
    add_init_flags(est);

    auto* sr = app.add_subcommand("superres", "evaluate a linear-decoder model on finer time grids");
    sr->add_option("--model", cfg.model, "model checkpoint (.json)");
    sr->add_option("--data", cfg.test_data, "dataset directory");
    sr->add_option("--factors", cfg.factors, "refinement factors")->delimiter(',');

    auto* pca_cmd = app.add_subcommand("latent-pca", "first principal component of the parameter features");
    pca_cmd->add_option("--model", cfg.model, "model checkpoint (.json)");
    pca_cmd->add_option("--grid", cfg.grid_n, "grid points per parameter");

    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      out << app.help();
      return 0;
    } catch (const CLI::ParseError& e) {
      err << "error: " << e.what() << '\n';
      return 1;
    }
    cfg.train.optimizer = diffcore::optimizer_from_string(optimizer);

    if (gen->parsed()) run_gen_data(cfg, out);
    else if (train->parsed()) run_train_forward(cfg, out);
    else if (eval->parsed()) run_eval_forward(cfg, out);
    else if (init->parsed()) run_invert_init(cfg, out);
    else if (refine->parsed()) run_train_refine(cfg, out);
    else if (est->parsed()) run_estimate(cfg, out);
    else if (sr->parsed()) run_superres(cfg, out);
    else if (pca_cmd->parsed()) run_latent_pca(cfg, out);
    return 0;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const UserError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace pdon::evalcli
