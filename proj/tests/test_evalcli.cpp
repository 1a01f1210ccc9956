#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "pdon/evalcli/cli.hpp"
#include "pdon/evalcli/pca.hpp"
#include "pdon/evalcli/superres.hpp"
#include "support.hpp"

using namespace pdon;
using namespace pdon::evalcli;
using diffcore::Matrix;
using models::Arch;
namespace fs = std::filesystem;

namespace {

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error("no column " + name);
    return static_cast<std::size_t>(it - header.begin());
  }
  double value(std::size_t row, const std::string& name) const { return std::stod(rows[row][column(name)]); }
};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

Csv read_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  Csv c;
  std::string line;
  std::getline(in, line);
  c.header = split(line);
  while (std::getline(in, line)) c.rows.push_back(split(line));
  return c;
}

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "pdon");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

const datagen::Dataset& dataset() {
  static const datagen::Dataset ds = [] {
    datagen::GenerateOptions o;
    o.n = 5;
    o.seed = 41;
    return datagen::generate_dataset(o);
  }();
  return ds;
}

std::unique_ptr<models::Surrogate> small_model(Arch arch) {
  auto s = models::default_config(arch, models::Family::duffing);
  s.branch = {200, 16, 8};
  s.param = {2, 16, 8};
  s.trunk = {20, 16, 8};
  if (arch == Arch::parametric_nd) s.decoder = {200, 12, 200};
  return models::make_surrogate(s, 6);
}

}  // namespace

TEST(Pca, CollinearFeaturesHaveOneComponent) {
  Matrix f(6, 3);
  for (Eigen::Index i = 0; i < 6; ++i) {
    const double s = 0.7 * static_cast<double>(i) - 1.3 + 0.1 * static_cast<double>(i * i);
    f.row(i) << 2.0 * s + 1.0, -s, 0.5 * s - 4.0;
  }
  const auto r = pca(f);
  EXPECT_NEAR(r.explained[0], 1.0, 1e-12);
  EXPECT_NEAR(r.explained[1] + r.explained[2], 0.0, 1e-12);
  const Eigen::Vector3d dir = Eigen::Vector3d(2.0, -1.0, 0.5).normalized();
  EXPECT_NEAR(std::abs(r.pc1.dot(dir)), 1.0, 1e-12);
  EXPECT_GT(r.pc1(0), 0.0);
}

TEST(Pca, ThreePointClosedForm) {
  // Covariance [[4/3, −2/3], [−2/3, 4/3]] has eigenvalues 2 and 2/3 along (1, −1) and (1, 1).
  Matrix f(3, 2);
  f << 0, 0, 2, 0, 0, 2;
  const auto r = pca(f);
  EXPECT_NEAR(r.explained[0], 0.75, 1e-14);
  EXPECT_NEAR(r.explained[1], 0.25, 1e-14);
  EXPECT_NEAR(r.pc1(0), std::numbers::sqrt2 / 2, 1e-14);
  EXPECT_NEAR(r.pc1(1), -std::numbers::sqrt2 / 2, 1e-14);
  EXPECT_NEAR(r.scores[0], 0.0, 1e-14);
  EXPECT_NEAR(r.scores[1], std::numbers::sqrt2, 1e-14);
  EXPECT_NEAR(r.scores[2], -std::numbers::sqrt2, 1e-14);
}

TEST(Pca, SignConventionAndRotationInvariance) {
  Rng rng(2);
  const Matrix f = pdon::testing::random_matrix(20, 4, rng);
  const auto a = pca(f);
  const auto b = pca(-f);
  // Negating the data flips the eigenvector, which the sign rule undoes.
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(a.pc1(i), b.pc1(i), 1e-12);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(a.scores[i], -b.scores[i], 1e-12);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(Eigen::MatrixXd(pdon::testing::random_matrix(4, 4, rng)));
  const Eigen::MatrixXd q = qr.householderQ();
  const auto c = pca(f * q);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(a.explained[k], c.explained[k], 1e-12);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(std::abs(a.scores[i]), std::abs(c.scores[i]), 1e-12);
}

TEST(Pca, DegenerateInputs) {
  const auto r = pca(Matrix::Constant(5, 3, 2.5));
  for (double e : r.explained) EXPECT_EQ(e, 0.0);
  for (double s : r.scores) EXPECT_EQ(s, 0.0);
  EXPECT_THROW(pca(Matrix::Zero(1, 3)), UserError);
}

TEST(LatentPca, GridCoversTheParameterBoxAndMatchesDirectPca) {
  const auto model = small_model(Arch::parametric_ld);
  const auto& pd = dynamic_cast<const models::ParametricDeepONet&>(*model);
  const auto& norm = dataset().normalization;
  const auto map = latent_pca(pd, norm, 6);
  ASSERT_EQ(map.points.rows(), 36);
  EXPECT_DOUBLE_EQ(map.points(0, 0), 10.0);
  EXPECT_DOUBLE_EQ(map.points(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(map.points(35, 0), 100.0);
  EXPECT_DOUBLE_EQ(map.points(35, 1), 10.0);
  Matrix u(36, 2);
  for (Eigen::Index i = 0; i < 36; ++i) u.row(i) << norm.normalize_mu(0, map.points(i, 0)), norm.normalize_mu(1, map.points(i, 1));
  const auto direct = pca(pd.param_net().forward_rows(u));
  for (std::size_t i = 0; i < 36; ++i) EXPECT_NEAR(map.scores[i], direct.scores[i], 1e-12);
  double total = 0.0;
  for (double e : map.explained) total += e;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_THROW(latent_pca(pd, norm, 1), UserError);
}

TEST(Superres, FactorOneEqualsEvaluationAndCoarsePointsReappear) {
  const auto model = small_model(Arch::parametric_ld);
  const auto res = superres_eval(*model, dataset(), {1, 2, 4});
  ASSERT_EQ(res.rows.size(), 3u);
  EXPECT_NEAR(res.rows[0].nrmse, forward::evaluate(*model, dataset()).aggregate, 1e-12);
  EXPECT_EQ(res.rows[0].resolution, 200u);
  EXPECT_EQ(res.rows[2].resolution, 800u);
  for (Eigen::Index j = 0; j < 200; ++j) {
    EXPECT_EQ(res.predictions[1].col(2 * j), res.predictions[0].col(j));
    EXPECT_EQ(res.predictions[2].col(4 * j), res.predictions[0].col(j));
  }
}

TEST(Superres, NonlinearDecoderIsRejectedWithAnExplanation) {
  const auto model = small_model(Arch::parametric_nd);
  try {
    superres_eval(*model, dataset());
    FAIL() << "expected rejection";
  } catch (const UserError& e) {
    EXPECT_NE(std::string(e.what()).find("linear-decoder"), std::string::npos);
  }
}

TEST(RunConfig, OverlaysKnownKeysAndRejectsUnknownOnes) {
  RunConfig c;
  apply_config(diffcore::Json::parse(R"({"case": "1c", "train": {"epochs": 7, "optimizer": "sgd"},
                                         "refinement": {"hidden": [8], "all_restarts": false}})"),
               c);
  EXPECT_EQ(c.case_id, "1c");
  EXPECT_EQ(c.train.epochs, 7u);
  EXPECT_EQ(c.train.optimizer, diffcore::OptimizerKind::sgd);
  EXPECT_EQ(c.refinement.hidden, (std::vector<std::size_t>{8}));
  EXPECT_FALSE(c.all_restarts);
  EXPECT_EQ(c.train.batch_size, 64u);
  EXPECT_THROW(apply_config(diffcore::Json::parse(R"({"epochs": 3})"), c), UserError);
  EXPECT_THROW(apply_config(diffcore::Json::parse(R"({"train": {"epoch": 3}})"), c), UserError);
  EXPECT_THROW(apply_config(diffcore::Json::parse(R"({"generate": {"n": "many"}})"), c), UserError);
}

TEST(RunConfig, OutputRootFallsBackToTheEnvironment) {
  RunConfig c;
  ::setenv(kOutputRootEnv, "/tmp/pdon-env-root", 1);
  EXPECT_EQ(c.output_root(), fs::path("/tmp/pdon-env-root"));
  c.output = "explicit";
  EXPECT_EQ(c.output_root(), fs::path("explicit"));
  ::unsetenv(kOutputRootEnv);
  c.output.clear();
  EXPECT_EQ(c.output_root(), fs::path("pdon-out"));
}

TEST(Cli, UsageErrorsExitWithStatusOne) {
  EXPECT_EQ(cli({}).code, 1);
  EXPECT_EQ(cli({"gen-data", "--bogus"}).code, 1);
  EXPECT_EQ(cli({"no-such-stage"}).code, 1);
  const auto missing = cli({"eval-forward", "--model", "/nonexistent/model.json", "--data", "/nonexistent"});
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("does not exist"), std::string::npos);
  const auto help = cli({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("gen-data"), std::string::npos);
}

TEST(Cli, GenDataWritesAValidManifestAndIsIdempotent) {
  pdon::testing::TempDir dir("cli-gen");
  ASSERT_EQ(cli({"gen-data", "--case", "1b", "--n", "3", "--seed", "4", "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(cli({"gen-data", "--case", "1b", "--n", "3", "--seed", "4", "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(cli({"gen-data", "--case", "1b", "--n", "3", "--seed", "4", "--out", (dir / "b").string()}).code, 0);
  const auto ds = datagen::load_dataset(dir / "a");
  EXPECT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.case_id, datagen::CaseId::c1b);
  const auto m = diffcore::read_json(dir / "a" / datagen::kManifestName);
  EXPECT_EQ(m.at("format"), "pdon-dataset");
  EXPECT_EQ(m.at("n"), 3);
  for (const char* f : {datagen::kManifestName, datagen::kDataName}) {
    EXPECT_EQ(diffcore::read_bytes(dir / "a" / f), diffcore::read_bytes(dir / "b" / f)) << f;
  }
}

TEST(Cli, ConfigFileValuesAreOverriddenByFlags) {
  pdon::testing::TempDir dir("cli-config");
  {
    std::ofstream(dir / "run.json") << R"({"case": "1d", "generate": {"n": 2}, "seed": 9})";
  }
  ASSERT_EQ(cli({"--config", (dir / "run.json").string(), "gen-data", "--out", (dir / "a").string()}).code, 0);
  EXPECT_EQ(datagen::load_dataset(dir / "a").size(), 2u);
  EXPECT_EQ(datagen::load_dataset(dir / "a").case_id, datagen::CaseId::c1d);
  ASSERT_EQ(cli({"--config", (dir / "run.json").string(), "gen-data", "--n", "3", "--out", (dir / "b").string()}).code, 0);
  EXPECT_EQ(datagen::load_dataset(dir / "b").size(), 3u);
  {
    std::ofstream(dir / "bad.json") << R"({"generate": {"count": 2}})";
  }
  EXPECT_EQ(cli({"--config", (dir / "bad.json").string(), "gen-data"}).code, 1);
}

TEST(Cli, PipelineStagesProduceReconcilingCsvs) {
  pdon::testing::TempDir dir("cli-pipe");
  const std::string data = (dir / "data").string();
  const std::string work = (dir / "work").string();
  datagen::save_dataset(dataset(), data);
  const auto model = small_model(Arch::parametric_ld);
  models::save_surrogate(*model, dir / "model.json");
  const std::string model_path = (dir / "model.json").string();

  // Forward evaluation CSV against the library result.
  ASSERT_EQ(cli({"eval-forward", "--model", model_path, "--data", data, "--out", work}).code, 0);
  const auto ev = forward::evaluate(*model, dataset());
  const auto eval_csv = read_csv(dir / "work" / "eval.csv");
  ASSERT_EQ(eval_csv.rows.size(), dataset().size() + 1);
  for (std::size_t i = 0; i < dataset().size(); ++i) EXPECT_NEAR(eval_csv.value(i, "nrmse"), ev.per_sample[i], 1e-12);
  EXPECT_EQ(eval_csv.rows.back()[0], "aggregate");
  EXPECT_NEAR(eval_csv.value(dataset().size(), "nrmse"), ev.aggregate, 1e-12);
  const auto first = diffcore::read_bytes(dir / "work" / "eval.csv");
  ASSERT_EQ(cli({"eval-forward", "--model", model_path, "--data", data, "--out", work}).code, 0);
  EXPECT_EQ(diffcore::read_bytes(dir / "work" / "eval.csv"), first);

  // Initialization, refinement training and estimation.
  const std::vector<std::string> init_flags{"--restarts", "2", "--init-epochs", "30", "--init-lr", "0.01"};
  std::vector<std::string> args{"invert-init", "--model", model_path, "--data", data, "--out", work};
  args.insert(args.end(), init_flags.begin(), init_flags.end());
  ASSERT_EQ(cli(args).code, 0);
  const std::string init_path = (dir / "work" / "init.json").string();
  ASSERT_EQ(cli({"train-refine", "--model", model_path, "--data", data, "--init", init_path, "--epochs", "3",
                 "--batch-size", "4", "--out", work})
                .code,
            0);
  EXPECT_EQ(read_csv(dir / "work" / "refine_history.csv").rows.size(), 4u);
  args = {"estimate", "--model", model_path, "--refine", (dir / "work" / "refine.json").string(), "--data", data,
          "--init", init_path, "--out", work};
  ASSERT_EQ(cli(args).code, 0);

  const auto est = read_csv(dir / "work" / "estimates.csv");
  const auto summary = read_csv(dir / "work" / "estimate_summary.csv");
  ASSERT_EQ(est.rows.size(), dataset().size());
  for (std::size_t d = 0; d < 2; ++d) {
    const std::string p = "mu" + std::to_string(d + 1);
    for (const char* kind : {"init", "refined"}) {
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < est.rows.size(); ++i) {
        const double t = est.value(i, p + "_true");
        const double e = est.value(i, p + "_" + kind);
        num += (e - t) * (e - t);
        den += t * t;
      }
      EXPECT_NEAR(summary.value(d, std::string(kind) + "_nrmse"), std::sqrt(num / den), 1e-12) << p << " " << kind;
    }
  }
  // The initialization-only table agrees with the estimate table on μ*.
  const auto init_csv = read_csv(dir / "work" / "init_estimates.csv");
  for (std::size_t i = 0; i < est.rows.size(); ++i) EXPECT_EQ(init_csv.rows[i][init_csv.column("mu1_init")], est.rows[i][est.column("mu1_init")]);

  ASSERT_EQ(cli({"superres", "--model", model_path, "--data", data, "--factors", "1,2", "--out", work}).code, 0);
  const auto sr = read_csv(dir / "work" / "superres.csv");
  ASSERT_EQ(sr.rows.size(), 2u);
  EXPECT_NEAR(sr.value(0, "nrmse"), ev.aggregate, 1e-12);
  EXPECT_EQ(sr.rows[1][sr.column("resolution")], "400");

  ASSERT_EQ(cli({"latent-pca", "--model", model_path, "--grid", "4", "--out", work}).code, 0);
  EXPECT_EQ(read_csv(dir / "work" / "pca.csv").rows.size(), 16u);
}

TEST(Cli, ExecutableSmokeTest) {
  pdon::testing::TempDir dir("cli-exe");
  const std::string exe = PDON_CLI_PATH;
  const int ok = std::system((exe + " gen-data --n 2 --out " + (dir / "d").string() + " > /dev/null").c_str());
  ASSERT_TRUE(WIFEXITED(ok));
  EXPECT_EQ(WEXITSTATUS(ok), 0);
  EXPECT_TRUE(fs::exists(dir / "d" / datagen::kManifestName));
  const int bad = std::system((exe + " gen-data --bogus 2> /dev/null").c_str());
  ASSERT_TRUE(WIFEXITED(bad));
  EXPECT_EQ(WEXITSTATUS(bad), 1);
}
