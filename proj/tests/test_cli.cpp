// Drives the built stmort binary end to end.

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("stmort_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Outcome run(const std::string& args, const fs::path& dir) {
  const fs::path o = dir / "stdout.txt", e = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + STMORT_CLI + "\" " + args + " > \"" + o.string() + "\" 2> \"" + e.string() + "\"";
  const int status = std::system(cmd.c_str());
  Outcome r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

// Relative path -> bytes for every regular file under root.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) m[fs::relative(e.path(), root).string()] = slurp(e.path());
  return m;
}

std::size_t data_rows(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::size_t n = 0;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    ++n;
  }
  return n;
}

std::string header_line(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') return line;
  return {};
}

const fs::path kFeatures = fs::path(STMORT_TEST_DATA) / "features";

// Copies the feature fixture so the config can be edited freely.
fs::path feature_copy(const std::string& name) {
  const fs::path d = scratch(name);
  for (const auto& e : fs::directory_iterator(kFeatures))
    if (e.is_regular_file()) fs::copy_file(e.path(), d / e.path().filename());
  return d;
}

json small_sim_config() {
  return json{{"rows", 2}, {"cols", 2}, {"ages", 2}, {"weeks", 8}, {"seed", 11}};
}

}  // namespace

TEST(Cli, FeaturesMatchGolden) {
  const fs::path d = scratch("golden");
  const Outcome r = run("features -c \"" + (kFeatures / "config.json").string() + "\" --out \"" + (d / "out").string() + "\"", d);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto got = tree(d / "out"), want = tree(kFeatures / "golden");
  ASSERT_EQ(got.size(), want.size());
  for (const auto& [name, bytes] : want) {
    ASSERT_TRUE(got.count(name)) << name;
    EXPECT_EQ(got.at(name), bytes) << name;
  }
}

TEST(Cli, FeaturesRerunIdentical) {
  const fs::path d = scratch("rerun");
  const std::string cfg = "features -c \"" + (kFeatures / "config.json").string() + "\" --out ";
  ASSERT_EQ(run(cfg + "\"" + (d / "a").string() + "\"", d).code, 0);
  ASSERT_EQ(run(cfg + "\"" + (d / "b").string() + "\"", d).code, 0);
  EXPECT_EQ(tree(d / "a"), tree(d / "b"));
}

TEST(Cli, FeaturesRepeatWritesSeededCopies) {
  const fs::path d = scratch("repeat");
  const Outcome r = run("features -c \"" + (kFeatures / "config.json").string() + "\" --repeat 2 --out \"" + (d / "o").string() + "\"", d);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(d / "o" / "repeat_01" / "design.csv"));
  EXPECT_TRUE(fs::exists(d / "o" / "repeat_02" / "design.csv"));
}

TEST(Cli, MissingLookupNamesThePath) {
  const fs::path d = feature_copy("missing");
  fs::remove(d / "lookup.csv");
  const Outcome r = run("features -c \"" + (d / "config.json").string() + "\" --out \"" + (d / "o").string() + "\"", d);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("lookup.csv"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(d / "o" / "design.csv"));
}

TEST(Cli, UnknownKeyAndBadJson) {
  const fs::path d = feature_copy("badcfg");
  json cfg = json::parse(slurp(d / "config.json"));
  cfg["stations_typo"] = "x";
  spit(d / "config.json", cfg.dump());
  Outcome r = run("features -c \"" + (d / "config.json").string() + "\" --out \"" + (d / "o").string() + "\"", d);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("stations_typo"), std::string::npos) << r.err;

  spit(d / "config.json", "{\"k\": 1,");
  r = run("features -c \"" + (d / "config.json").string() + "\" --out \"" + (d / "o").string() + "\"", d);
  EXPECT_EQ(r.code, 1);
}

TEST(Cli, UsageErrors) {
  const fs::path d = scratch("usage");
  EXPECT_EQ(run("", d).code, 1);
  EXPECT_EQ(run("bogus", d).code, 1);
  EXPECT_EQ(run("fit --gender neither", d).code, 1);
  EXPECT_EQ(run("features -c \"" + (d / "nope.json").string() + "\"", d).code, 1);
  const Outcome h = run("--help", d);
  EXPECT_EQ(h.code, 0);
  EXPECT_NE(h.out.find("simulate"), std::string::npos);
}

TEST(Cli, SimulateDeskScale) {
  const fs::path d = scratch("simdesk");
  const Outcome r = run("simulate --desk-scale --seed 4 --out \"" + (d / "a").string() + "\"", d);
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"observations.csv", "design.csv", "adjacency.tsv", "districts.csv", "truth.json", "manifest.json"})
    EXPECT_TRUE(fs::exists(d / "a" / f)) << f;
  // Both genders by default.
  EXPECT_EQ(data_rows(slurp(d / "a" / "observations.csv")), 2u * 1872u);
  EXPECT_EQ(data_rows(slurp(d / "a" / "design.csv")), 9u * 52u);
  const json truth = json::parse(slurp(d / "a" / "truth.json"));
  EXPECT_EQ(truth.at("districts"), 9);
  EXPECT_EQ(truth.at("genders").size(), 2u);
  EXPECT_EQ(truth.at("genders")[0].at("random_effects").at(std::string("space_time")).size(), 9u * 52u);

  ASSERT_EQ(run("simulate --desk-scale --seed 5 --out \"" + (d / "b").string() + "\"", d).code, 0);
  const std::string a = slurp(d / "a" / "observations.csv"), b = slurp(d / "b" / "observations.csv");
  EXPECT_EQ(header_line(a), header_line(b));
  EXPECT_EQ(data_rows(a), data_rows(b));
  EXPECT_NE(a, b);
}

TEST(Cli, SimulateTruthLayoutWithFewAges) {
  const fs::path d = scratch("simages");
  spit(d / "sim.json", small_sim_config().dump());
  const Outcome r = run("simulate -c \"" + (d / "sim.json").string() + "\" --out \"" + (d / "o").string() + "\"", d);
  ASSERT_EQ(r.code, 0) << r.err;
  const json truth = json::parse(slurp(d / "o" / "truth.json"));
  const auto& re = truth.at("genders")[0].at("random_effects");
  EXPECT_EQ(re.at("age").size(), 4u);
  EXPECT_EQ(re.at("space_time").size(), 4u * 8u);
  EXPECT_EQ(data_rows(slurp(d / "o" / "observations.csv")), 2u * 4u * 2u * 8u);
}

TEST(Cli, SimulateRefusesOversized) {
  const fs::path d = scratch("simbig");
  spit(d / "sim.json", json{{"rows", 100}, {"cols", 100}, {"weeks", 52}}.dump());
  const Outcome r = run("simulate -c \"" + (d / "sim.json").string() + "\" --out \"" + (d / "o").string() + "\"", d);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--desk-scale"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(d / "o" / "observations.csv"));
}

class CliFit : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = scratch("fit");
    spit(dir_ / "sim.json", small_sim_config().dump());
    const Outcome s = run("simulate -c \"" + (dir_ / "sim.json").string() + "\" --out \"" + (dir_ / "data").string() + "\"", dir_);
    ASSERT_EQ(s.code, 0) << s.err;
    spit(dir_ / "data" / "fit.json", json{{"observations", "observations.csv"},
                                           {"design", "design.csv"},
                                           {"adjacency", "adjacency.tsv"},
                                           {"districts", "districts.csv"},
                                           {"draws", 200},
                                           {"seed", 3}}
                                         .dump(2));
  }
  static fs::path config() { return dir_ / "data" / "fit.json"; }
  static inline fs::path dir_;
};

TEST_F(CliFit, BothGendersAndReport) {
  const fs::path out = dir_ / "fit_both";
  const Outcome r = run("fit -c \"" + config().string() + "\" --gender both --out \"" + out.string() + "\"", dir_);
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* g : {"female", "male"}) {
    EXPECT_EQ(data_rows(slurp(out / g / "fixed_effects.csv")), 14u) << g;
    EXPECT_TRUE(fs::exists(out / g / "fit_result.json")) << g;
    EXPECT_TRUE(fs::exists(out / g / "dic.csv")) << g;
    const json j = json::parse(slurp(out / g / "fit_result.json"));
    EXPECT_EQ(j.at("fixed_effects").size(), 14u);
  }
  EXPECT_TRUE(fs::exists(out / "manifest.json"));

  const Outcome rep = run("report --gender both --out \"" + out.string() + "\"", dir_);
  ASSERT_EQ(rep.code, 0) << rep.err;
  EXPECT_NE(rep.out.find("(female)"), std::string::npos);
  EXPECT_NE(rep.out.find("(male)"), std::string::npos);
  EXPECT_NE(rep.out.find("elevation_km"), std::string::npos);
  EXPECT_NE(rep.out.find("DIC"), std::string::npos);

  EXPECT_EQ(run("report --gender female --out \"" + (dir_ / "nothing").string() + "\"", dir_).code, 1);
}

TEST_F(CliFit, IterationCapIsNumericalFailure) {
  json cfg = json::parse(slurp(config()));
  cfg["newton_max_iterations"] = 1;
  spit(dir_ / "data" / "fit_capped.json", cfg.dump());
  const Outcome r = run("fit -c \"" + (dir_ / "data" / "fit_capped.json").string() + "\" --gender female --out \"" +
                        (dir_ / "capped").string() + "\"",
                    dir_);
  EXPECT_EQ(r.code, 2) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "capped" / "female" / "fit_result.json"));
}

TEST_F(CliFit, MissingInputIsValidationError) {
  json cfg = json::parse(slurp(config()));
  cfg.erase("design");
  spit(dir_ / "data" / "fit_nodesign.json", cfg.dump());
  const Outcome r = run("fit -c \"" + (dir_ / "data" / "fit_nodesign.json").string() + "\" --out \"" + (dir_ / "nd").string() + "\"", dir_);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("design"), std::string::npos) << r.err;
}
