#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string err;
};

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rldp_cli_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

// Runs the CLI with `args` (shell syntax) and an optional environment prefix.
Result run(const std::string& args, const std::string& env = "") {
  const fs::path err = scratch("stderr") / "err.txt";
  const std::string cmd = env + " '" + std::string(RLDP_CLI_PATH) + "' " + args + " > /dev/null 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

const std::string kKernel = R"(--kernel '{"rows":[[0.9,0.1],[0.2,0.8]]}')";

}  // namespace

TEST(Cli, KernelWithZeroEntryIsAConfigError) {
  const fs::path out = scratch("bad_kernel");
  const Result r = run(R"(--kernel '{"rows":[[1,0],[0.5,0.5]]}' --out )" + out.string() + " simulate --n 5");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Assumption 1"), std::string::npos) << r.err;
}

TEST(Cli, UnknownConfigKeyIsAConfigError) {
  const fs::path dir = scratch("unknown_key");
  std::ofstream(dir / "cfg.json") << R"({"kernel":{"rows":[[0.9,0.1],[0.2,0.8]]},"n":5,"colour":"red"})";
  const Result r = run("--config " + (dir / "cfg.json").string() + " --out " + dir.string() + " simulate");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("colour"), std::string::npos) << r.err;
}

TEST(Cli, SimulateWritesOnePathPerSeedAndIsDeterministic) {
  const fs::path a = scratch("sim_a"), b = scratch("sim_b");
  ASSERT_EQ(run(kKernel + " --seed 7 --out " + a.string() + " simulate --n 50 --seeds 3").code, 0);
  ASSERT_EQ(run(kKernel + " --seed 7 --threads 2 --out " + b.string() + " simulate --n 50 --seeds 3").code, 0);
  for (const char* f : {"path_0.csv", "path_1.csv", "path_2.csv", "summary.csv"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  EXPECT_FALSE(fs::exists(a / "path_3.csv"));
  const std::string summary = slurp(a / "summary.csv");
  EXPECT_EQ(summary.rfind("# config_hash=", 0), 0u);
  EXPECT_NE(summary.find("seed=7"), std::string::npos);
  EXPECT_EQ(lines(summary), 2u + 3u);
  // 50 rows plus the column header and the provenance line.
  EXPECT_EQ(lines(slurp(a / "path_0.csv")), 52u);
}

TEST(Cli, ConfigFileAndFlagsShareKeysWithFlagsWinning) {
  const fs::path dir = scratch("precedence");
  std::ofstream(dir / "cfg.json") << R"({"kernel":{"rows":[[0.9,0.1],[0.2,0.8]]},"n":5,"seeds":2,"seed":3})";
  ASSERT_EQ(run("--config " + (dir / "cfg.json").string() + " --out " + dir.string() + " simulate --n 8").code, 0);
  EXPECT_EQ(lines(slurp(dir / "path_0.csv")), 10u);
  EXPECT_TRUE(fs::exists(dir / "path_1.csv"));
}

TEST(Cli, RateMeshHas66RowsAndOptionalDvColumn) {
  const fs::path dir = scratch("rate_mesh");
  const std::string kernel3 = R"(--kernel '{"rows":[[0.5,0.3,0.2],[0.1,0.6,0.3],[0.3,0.3,0.4]]}')";
  ASSERT_EQ(run(kernel3 + " --out " + dir.string() + R"( rate --mesh '{"step":0.1}' --T 4 --J 20 --dv)").code, 0);
  const std::string csv = slurp(dir / "rate.csv");
  EXPECT_EQ(lines(csv), 66u + 2u);
  EXPECT_NE(csv.find("m_1,m_2,m_3,lower,upper,dv_rate,iterations"), std::string::npos);

  const fs::path one = scratch("rate_point");
  ASSERT_EQ(run(kKernel + " --out " + one.string() + " rate --m '[0.3,0.7]' --T 4 --J 20").code, 0);
  const std::string single = slurp(one / "rate.csv");
  EXPECT_EQ(lines(single), 3u);
  EXPECT_EQ(single.find("dv_rate"), std::string::npos);
}

TEST(Cli, InvalidValueExitsWith2AndPreconditionViolationWith3) {
  const fs::path dir = scratch("precondition");
  const Result r = run(kKernel + " --out " + dir.string() + " rate --m '[0.3,0.7]' --T -1");
  EXPECT_EQ(r.code, 2) << r.err;
  const Result p = run(kKernel + " --out " + dir.string() + " lowerbound --m '[0.3,0.7]' --T 1.003 --solver_T 2");
  EXPECT_EQ(p.code, 3) << p.err;
}

TEST(Cli, MemoryCapExitsWith4) {
  const fs::path dir = scratch("memcap");
  const std::string kernel3 = R"(--kernel '{"rows":[[0.5,0.3,0.2],[0.1,0.6,0.3],[0.3,0.3,0.4]]}')";
  const Result r = run(kernel3 + " --out " + dir.string() + " exact --n 4000", "REINFORCED_LDP_MEM_CAP_MB=1");
  EXPECT_EQ(r.code, 4) << r.err;
}

TEST(Cli, ExactWritesLawAndRateTrend) {
  const fs::path dir = scratch("exact");
  ASSERT_EQ(run(kKernel + " --out " + dir.string() + " exact --n 12 --target '[0.3,0.7]' --radius 0.2 --n_list '[6,12]'")
                .code,
            0);
  EXPECT_EQ(lines(slurp(dir / "law.csv")), 2u + 12u);
  EXPECT_EQ(lines(slurp(dir / "rate_trend.csv")), 2u + 2u);
}

TEST(Cli, LowerboundWritesPlanAndConstructionFiles) {
  const fs::path dir = scratch("lowerbound");
  ASSERT_EQ(run(kKernel + " --out " + dir.string() +
                " lowerbound --m '[0.3,0.7]' --T 1 --solver_T 2 --solver_J 40 --eps 0.1 --n_list '[500,1000]' --seeds 4")
                .code,
            0);
  const std::string plan = slurp(dir / "plan.json");
  EXPECT_NE(plan.find("\"provenance\""), std::string::npos);
  EXPECT_NE(plan.find("\"kappas\""), std::string::npos);
  EXPECT_EQ(lines(slurp(dir / "construction.csv")), 2u + 8u);
  EXPECT_EQ(lines(slurp(dir / "cost_check.csv")), 2u + 2u);
}
