// stmort: weather covariates, model fitting, simulation and reporting.

#include "stmort/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace pl = stmort::pipeline;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> gender;
  std::optional<std::string> fusion;
  std::optional<stmort::Index> k;
  std::optional<std::string> out;
  std::optional<stmort::Index> draws;
  bool desk_scale = false;
  std::optional<int> repeat;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--out", o.out, "output directory");
}

pl::RunConfig resolve(const Overrides& o) {
  pl::RunConfig c = o.config.empty() ? pl::RunConfig{} : pl::load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.gender) c.gender = *o.gender;
  if (o.fusion) c.fusion = *o.fusion;
  if (o.k) c.k = *o.k;
  if (o.out) c.out = *o.out;
  if (o.draws) c.draws = *o.draws;
  if (o.desk_scale) c.desk_scale = true;
  if (o.repeat) c.repeat = *o.repeat;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal weekly mortality modelling with weather covariates"};
  app.require_subcommand(1);
  Overrides o;

  auto* features = app.add_subcommand("features", "build weekly district covariates from station data");
  add_common(features, o);
  features->add_option("--fusion", o.fusion, "weather fusion scope")->check(CLI::IsMember({"district", "state"}));
  features->add_option("--k", o.k, "nearest stations for districts without one")->check(CLI::PositiveNumber);
  features->add_option("--repeat", o.repeat, "repeat with consecutive imputation seeds")->check(CLI::PositiveNumber);

  auto* fit = app.add_subcommand("fit", "fit the mortality model for one or both genders");
  add_common(fit, o);
  fit->add_option("--gender", o.gender, "gender to fit")->check(CLI::IsMember({"female", "male", "both"}));
  fit->add_option("--draws", o.draws, "posterior draws for DIC");
  fit->add_flag("--desk-scale", o.desk_scale, "cap latent dimensions for a desktop run");

  auto* sim = app.add_subcommand("simulate", "draw a synthetic dataset with planted effects");
  add_common(sim, o);
  sim->add_flag("--desk-scale", o.desk_scale, "3x3 districts, 4 age groups, 52 weeks");

  auto* report = app.add_subcommand("report", "print fitted fixed effects and DIC");
  add_common(report, o);
  report->add_option("--gender", o.gender, "gender to report")->check(CLI::IsMember({"female", "male", "both"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    const pl::RunConfig cfg = resolve(o);
    if (*features) {
      pl::cmd_features(cfg);
    } else if (*fit) {
      pl::cmd_fit(cfg);
    } else if (*sim) {
      pl::cmd_simulate(cfg);
    } else {
      std::cout << pl::cmd_report(cfg);
    }
  } catch (const stmort::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const stmort::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
