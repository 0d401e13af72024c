#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "atrpp/experiment.hpp"

namespace ex = atrpp::experiment;

namespace {

enum Exit { ok = 0, usage = 1, data = 2, numeric = 3 };

ex::RunConfig resolved(const std::string& config_path, const std::optional<std::uint64_t>& seed,
                       const std::optional<unsigned>& threads, const std::optional<std::string>& out) {
  ex::RunConfig c = config_path.empty() ? ex::RunConfig{} : ex::load_config(config_path);
  if (seed) c.seed = *seed;
  if (threads) c.threads = *threads;
  if (out) c.out = *out;  // paths already resolved in a manifest keep pointing at their inputs
  return ex::resolve(c);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attentional twin-LSTM point process: simulate, train, evaluate, compare, export"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::optional<std::string> out;
  app.add_option("--config", config_path, "INI config or a manifest_*.json from an earlier run")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "overrides [run] seed");
  app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", out, "output directory");

  auto* simulate = app.add_subcommand("simulate", "generate synthetic Hawkes cascades");
  auto* train = app.add_subcommand("train", "train the neural model");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* baselines = app.add_subcommand("baselines", "fit and score the classical baselines");
  auto* infectivity = app.add_subcommand("infectivity", "export the learned infectivity matrix");
  for (auto* sub : {simulate, train, eval, baselines, infectivity}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  try {
    const auto c = resolved(config_path, seed, threads, out);
    nlohmann::json summary;
    if (*simulate) summary = ex::cmd_simulate(c);
    else if (*train) summary = ex::cmd_train(c);
    else if (*eval) summary = ex::report_json(ex::cmd_eval(c));
    else if (*baselines) {
      const auto run = ex::cmd_baselines(c);
      for (const auto& row : run.rows) summary[row.report.model] = row.status;
    } else if (*infectivity) {
      const auto est = ex::cmd_infectivity(c);
      summary = {{"records", est.records}, {"out", c.out}};
    }
    std::cout << summary.dump(2) << "\n";
    return ok;
  } catch (const atrpp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return usage;
  } catch (const atrpp::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return numeric;
  } catch (const atrpp::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return data;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return data;
  }
}
