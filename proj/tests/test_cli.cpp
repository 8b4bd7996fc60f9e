#include "gmm_audit/cli/run.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace ga = gmm_audit;
namespace cli = gmm_audit::cli;
namespace fs = std::filesystem;

namespace {

const fs::path source_dir = GMM_AUDIT_SOURCE_DIR;
const std::string cli_path = GMM_AUDIT_CLI_PATH;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("gmm_audit_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

cli::ojson read_json(const fs::path& path) { return cli::ojson::parse(cli::read_text(path)); }

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = "\"" + cli_path + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

template <class Fn>
std::string config_error(Fn&& fn) {
  try {
    fn();
  } catch (const ga::ConfigError& e) {
    return e.what();
  }
  return "";
}

const char* small_run_config = R"({
  "config_version": 1,
  "seed": 3,
  "model": {"name": "mean_square_match", "params": {"x": "x"}},
  "data_path": "data.csv",
  "strategies": [{"kind": "two_step"}, {"kind": "fixed_weight", "weight": [[1, 0], [0, 1]]}],
  "inference": {"bootstrap": {"B": 200, "scheme": "plain"}},
  "audit": {"kappa": 50, "tau": [0.25, 0.5, 1.0], "n_draws": 40, "t_budget": 10},
  "output_dir": "out"
})";

std::string small_data() {
  std::ostringstream os;
  os << "x\n";
  const auto data = ga::mc::MeanSquareDgp{}.simulate(120, 4);
  os.precision(17);
  for (ga::Index i = 0; i < data.rows(); ++i) os << data.values()(i, 0) << "\n";
  return os.str();
}

}  // namespace

TEST(Csv, ParsesHeaderAndRows) {
  const auto d = cli::parse_csv("a, b\n1,2.5\n-3,4e-2\r\n\n");
  EXPECT_EQ(d.rows(), 2);
  ASSERT_EQ(d.column_names().size(), 2U);
  EXPECT_EQ(d.column_names()[1], "b");
  EXPECT_EQ(d.values()(1, 1), 0.04);
}

TEST(Csv, EmptyOrHeaderOnlyIsAFormatError) {
  EXPECT_THROW(cli::parse_csv(""), ga::FormatError);
  EXPECT_THROW(cli::parse_csv("\n\n"), ga::FormatError);
  EXPECT_THROW(cli::parse_csv("x,y\n"), ga::FormatError);
}

TEST(Csv, NonNumericCellReportsLineAndColumn) {
  try {
    cli::parse_csv("x,y\n1,2\n3,NA\n");
    FAIL() << "expected a parse error";
  } catch (const ga::ParseError& e) {
    EXPECT_EQ(e.line(), 3U);
    EXPECT_EQ(e.column(), 2U);
  }
}

TEST(Csv, MissingAndExtraCells) {
  try {
    cli::parse_csv("x,y\n1\n");
    FAIL() << "expected a parse error";
  } catch (const ga::ParseError& e) {
    EXPECT_EQ(e.line(), 2U);
    EXPECT_EQ(e.column(), 2U);
  }
  EXPECT_THROW(cli::parse_csv("x,y\n1,2,3\n"), ga::ParseError);
  EXPECT_THROW(cli::parse_csv("x,y\n1,\n"), ga::ParseError);
  EXPECT_THROW(cli::parse_csv("x\ninf\n"), ga::ParseError);
}

TEST(Config, ParsesTheDemoConfig) {
  const fs::path path = source_dir / "demo" / "mean_square_demo.json";
  const auto cfg = cli::parse_run_config(cli::read_text(path), path.parent_path());
  EXPECT_EQ(cfg.model_name, "mean_square_match");
  EXPECT_EQ(cfg.strategies.size(), 4U);
  ASSERT_TRUE(cfg.audit.has_value());
  EXPECT_EQ(cfg.audit->tau.size(), 3U);
  ASSERT_TRUE(cfg.seed.has_value());
  EXPECT_EQ(cfg.data_path, source_dir / "demo" / "mean_square_demo.csv");
}

TEST(Config, UnknownKeysNameTheField) {
  auto msg = config_error([] { cli::parse_run_config(R"({"config_version": 1, "sed": 4})"); });
  EXPECT_NE(msg.find("'sed'"), std::string::npos) << msg;
  msg = config_error([] {
    cli::parse_run_config(R"({"config_version": 1, "model": {"name": "linear_iv"}, "data_path": "d.csv",
                              "strategies": [{"kind": "two_step", "weights": 1}]})");
  });
  EXPECT_NE(msg.find("strategies[0].weights"), std::string::npos) << msg;
}

TEST(Config, UnknownStrategyKindListsTheValidOnes) {
  const auto msg = config_error([] {
    cli::parse_run_config(R"({"config_version": 1, "model": {"name": "linear_iv"}, "data_path": "d.csv",
                              "strategies": [{"kind": "continuously_updated"}]})");
  });
  EXPECT_NE(msg.find("strategies[0].kind"), std::string::npos) << msg;
  EXPECT_NE(msg.find("two_step"), std::string::npos) << msg;
}

TEST(Config, ValueChecks) {
  const std::string head = R"({"config_version": 1, "model": {"name": "mean_square_match"}, "data_path": "d.csv", )";
  EXPECT_NE(config_error([&] { cli::parse_run_config(head + R"("strategies": [{"kind": "identity_scaled", "scale": [1, 0]}]})"); })
                .find("strategies[0].scale"),
            std::string::npos);
  EXPECT_NE(config_error([&] {
              cli::parse_run_config(head + R"("strategies": [{"kind": "two_step"}], "audit": {"kappa": 0.5}})");
            }).find("audit.kappa"),
            std::string::npos);
  EXPECT_NE(config_error([&] {
              cli::parse_run_config(head + R"("strategies": [{"kind": "two_step"}], "audit": {"tau": [-1]}})");
            }).find("audit.tau"),
            std::string::npos);
  EXPECT_NE(config_error([&] {
              cli::parse_run_config(head + R"("strategies": [{"kind": "fixed_weight", "weight": [[1, 2], [0, 1]]}]})");
            }).find("strategies[0].weight"),
            std::string::npos);
  EXPECT_NE(config_error([] { cli::parse_run_config(R"({"config_version": 2})"); }).find("config_version"),
            std::string::npos);
  EXPECT_NE(config_error([] { cli::parse_run_config(R"({"seed": 1})"); }).find("config_version"), std::string::npos);
  EXPECT_NE(config_error([] { cli::parse_run_config("{not json"); }).find("invalid JSON"), std::string::npos);
}

TEST(Config, LimitLabExperiments) {
  const fs::path exact = source_dir / "demo" / "limit_lab_exact.json";
  const auto a = cli::parse_limit_lab_config(cli::read_text(exact), exact.parent_path());
  EXPECT_TRUE(std::holds_alternative<cli::ExactExperiment>(a.spec));
  const fs::path local = source_dir / "demo" / "limit_lab_local.json";
  const auto b = cli::parse_limit_lab_config(cli::read_text(local), local.parent_path());
  ASSERT_TRUE(std::holds_alternative<cli::LocalExperiment>(b.spec));
  EXPECT_EQ(std::get<cli::LocalExperiment>(b.spec).settings.n_grid.size(), 3U);
  EXPECT_NE(config_error([] {
              cli::parse_limit_lab_config(R"({"config_version": 1, "experiment": "exact", "gamma": [[1], [1]],
                                              "sigma": [[1, 0], [0, 1]], "h": [1], "y": [1, 2, 3]})");
            }).find("'y'"),
            std::string::npos);
}

TEST(Run, SmallConfigReportIsConsistent) {
  const fs::path dir = scratch("small_run");
  write(dir / "config.json", small_run_config);
  write(dir / "data.csv", small_data());
  const auto out = cli::run(dir / "config.json");
  ASSERT_EQ(out.exit_code, 0) << out.report.dump(2);
  for (const char* f : {"report.json", "report.md", "audit_points.csv"}) EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;

  const auto report = read_json(dir / "out" / "report.json");
  EXPECT_EQ(report, out.report);
  EXPECT_EQ(report.at("status"), "ok");
  EXPECT_EQ(report.at("provenance").at("seed"), 3);
  for (const auto& e : report.at("estimates")) {
    const double theta = e.at("theta_hat").get<double>();
    const auto& ci = e.at("bootstrap").at("percentile_ci");
    EXPECT_LE(ci.at("lo").get<double>(), theta);
    EXPECT_GE(ci.at("hi").get<double>(), theta);
    EXPECT_GT(e.at("se").at("robust").get<double>(), 0.0);
  }
  const auto& audit = report.at("audit");
  const double theta_eff = audit.at("theta_eff").get<double>();
  const double se_eff = audit.at("se_eff").get<double>();
  const double j = audit.at("J").get<double>();
  EXPECT_EQ(j, report.at("j_statistic").at("J").get<double>());
  double prev = -1.0;
  for (const auto& blk : audit.at("intervals")) {
    const auto iv = ga::attainable_interval(theta_eff, se_eff, j, blk.at("tau").get<double>());
    EXPECT_EQ(blk.at("interval").at("lo").get<double>(), iv.lo);
    EXPECT_EQ(blk.at("interval").at("hi").get<double>(), iv.hi);
    EXPECT_GT(iv.width(), prev);
    prev = iv.width();
  }

  std::ifstream points(dir / "out" / "audit_points.csv");
  std::string header;
  std::getline(points, header);
  EXPECT_EQ(header, "source,theta,se,kappa,accepted_tau_0.25,accepted_tau_0.5,accepted_tau_1");
  std::size_t lines = 0;
  for (std::string line; std::getline(points, line);) ++lines;
  EXPECT_EQ(lines, audit.at("sampled_points").get<std::size_t>());
}

TEST(Run, SeedOverrideAndOutputDirectory) {
  const fs::path dir = scratch("seed_override");
  write(dir / "config.json", small_run_config);
  write(dir / "data.csv", small_data());
  cli::RunOptions opts;
  opts.seed = 99;
  opts.output_dir = dir / "elsewhere";
  const auto out = cli::run(dir / "config.json", opts);
  EXPECT_EQ(out.exit_code, 0);
  EXPECT_TRUE(fs::exists(dir / "elsewhere" / "report.json"));
  EXPECT_EQ(out.report.at("provenance").at("seed"), 99);
}

TEST(Run, DataErrorsAreReportedNotThrown) {
  const fs::path dir = scratch("bad_data");
  write(dir / "config.json", small_run_config);
  write(dir / "data.csv", "x\n1\nNA\n3\n");
  const auto out = cli::run(dir / "config.json");
  EXPECT_EQ(out.exit_code, 1);
  const auto report = read_json(dir / "out" / "report.json");
  EXPECT_EQ(report.at("status"), "error");
  EXPECT_EQ(report.at("error").at("kind"), "parse");
}

TEST(Run, GoldenDemoIsReproducible) {
  const fs::path config = source_dir / "demo" / "mean_square_demo.json";
  cli::RunOptions a, b;
  a.output_dir = scratch("golden_a");
  b.output_dir = scratch("golden_b");
  auto ra = cli::run(config, a).report;
  ga::set_threads(2);
  auto rb = cli::run(config, b).report;
  ga::set_threads(0);
  ASSERT_EQ(ra.at("status"), "ok") << ra.dump(2);
  ra["provenance"].erase("generated_at");
  rb["provenance"].erase("generated_at");
  EXPECT_EQ(ra.dump(2), rb.dump(2));
  EXPECT_EQ(cli::read_text(*a.output_dir / "audit_points.csv"), cli::read_text(*b.output_dir / "audit_points.csv"));

  // the demo estimates sit inside their own bootstrap intervals
  for (const auto& e : ra.at("estimates")) {
    const double theta = e.at("theta_hat").get<double>();
    EXPECT_LE(e.at("bootstrap").at("percentile_ci").at("lo").get<double>(), theta);
    EXPECT_GE(e.at("bootstrap").at("percentile_ci").at("hi").get<double>(), theta);
  }
}

TEST(LimitLabRun, ExactDemo) {
  cli::RunOptions opts;
  opts.output_dir = scratch("limit_exact");
  const auto out = cli::limit_lab_run(source_dir / "demo" / "limit_lab_exact.json", opts);
  ASSERT_EQ(out.exit_code, 0) << out.report.dump(2);
  const auto& lab = out.report.at("limit_lab");
  EXPECT_NEAR(lab.at("J").get<double>(), 2.0, 1e-14);
  const auto& iv = lab.at("intervals").at(1);
  EXPECT_EQ(iv.at("tau").get<double>(), 1.0);
  EXPECT_NEAR(iv.at("interval").at("lo").get<double>(), -1.0, 1e-14);
  EXPECT_NEAR(iv.at("interval").at("hi").get<double>(), 1.0, 1e-14);
  EXPECT_NEAR(lab.at("minmax_t").at("value").get<double>(), std::sqrt(2.0), 1e-6);
  EXPECT_NEAR(lab.at("cs_intersection").at("c_star").get<double>(), std::sqrt(2.0), 1e-8);
  EXPECT_TRUE(fs::exists(*opts.output_dir / "limit_points.csv"));
}

TEST(Executable, ConfigErrorsExitWithTwo) {
  const fs::path dir = scratch("exe_bad_config");
  write(dir / "config.json", R"({"config_version": 1, "bogus": true})");
  EXPECT_EQ(run_cli("run \"" + (dir / "config.json").string() + "\"", dir / "log.txt"), 2);
  EXPECT_NE(cli::read_text(dir / "log.txt").find("bogus"), std::string::npos);
  EXPECT_NE(run_cli("frobnicate", dir / "log2.txt"), 0);
}

TEST(Executable, RunWithFlagsAfterTheSubcommand) {
  const fs::path dir = scratch("exe_run");
  write(dir / "config.json", small_run_config);
  write(dir / "data.csv", small_data());
  const fs::path out = dir / "flag_out";
  ASSERT_EQ(run_cli("run \"" + (dir / "config.json").string() + "\" --seed 5 --threads 2 --output-dir \"" +
                        out.string() + "\"",
                    dir / "log.txt"),
            0)
      << cli::read_text(dir / "log.txt");
  const auto report = read_json(out / "report.json");
  EXPECT_EQ(report.at("provenance").at("seed"), 5);
  EXPECT_TRUE(fs::exists(out / "report.md"));
}

TEST(Executable, VerifyPrintsOneLinePerCheck) {
  const fs::path dir = scratch("exe_verify");
  ASSERT_EQ(run_cli("verify --output-dir \"" + (dir / "v").string() + "\"", dir / "log.txt"), 0)
      << cli::read_text(dir / "log.txt");
  std::istringstream log(cli::read_text(dir / "log.txt"));
  int pass = 0;
  for (std::string line; std::getline(log, line);) pass += line.rfind("PASS ", 0) == 0 ? 1 : 0;
  EXPECT_EQ(pass, 5);
  EXPECT_TRUE(read_json(dir / "v" / "verify.json").at("passed").get<bool>());
}
