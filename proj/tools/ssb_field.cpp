#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ssbwind/workflow.hpp"

using namespace ssbwind;

namespace {

constexpr int kConfigExit = 2;
constexpr int kNumericExit = 3;
constexpr int kIoExit = 4;

struct Args {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Args& a) {
  cmd->add_option("--config", a.config, "JSON run configuration")->required();
  cmd->add_option("--seed", a.seed, "Override the config seed");
  cmd->add_option("--out", a.out, "Override the output directory");
  cmd->add_option("--set", a.sets, "Override a config value, e.g. mcmc.n_iter=2000");
}

void print_ranking(const CompareResult& r) {
  std::cout << "rank  model         EMSPE      per scalar\n";
  for (std::size_t k = 0; k < r.ranking.size(); ++k) {
    const auto& rep = r.models[r.ranking[k]].report;
    std::printf("%-5zu %-13s %-10.4f %.4f\n", k + 1, rep.model.c_str(), rep.emspe.total,
                rep.emspe.total / static_cast<double>(rep.emspe.n_scalars));
  }
}

int run(const std::string& command, const Args& a) {
  const std::optional<fs::path> out = a.out ? std::optional<fs::path>(*a.out) : std::nullopt;
  const RunConfig cfg = load_run_config(a.config, a.sets, a.seed, out);
  if (command == "simulate") {
    const auto r = cmd_simulate(cfg);
    std::cout << "wrote " << r.synthetic.dataset.observations.size() << " observations to " << r.observations.string()
              << "\n";
  } else if (command == "diagnose") {
    const auto j = cmd_diagnose(cfg);
    std::cout << "m = " << j["m"].get<int>() << " (threshold " << cfg.diagnose.threshold << "), propriety "
              << (j["propriety"]["proper"].get<bool>() ? "established" : "not established (more draws or a larger lambda)") << "\n";
  } else if (command == "fit") {
    const auto r = cmd_fit(cfg);
    std::cout << r.samples.model << ": " << r.samples.n_draws() << " draws in " << r.dir.string() << "\n";
    for (const auto& w : r.samples.warnings) std::cerr << "warning: " << w << "\n";
  } else if (command == "predict") {
    const auto t = cmd_predict(cfg);
    std::cout << "wrote " << t.sites.size() << " prediction rows to " << (cfg.output_dir / "predictions.csv").string()
              << "\n";
  } else if (command == "compare") {
    print_ranking(cmd_compare(cfg));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial stick-breaking wind field fitting"};
  app.require_subcommand(1);
  Args args;
  for (const char* name : {"simulate", "diagnose", "fit", "predict", "compare"}) {
    add_common(app.add_subcommand(name), args);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumericExit;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIoExit;
  }
}
