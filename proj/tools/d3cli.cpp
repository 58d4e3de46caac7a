#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "d3/harness.hpp"

namespace {

using d3::harness::ExperimentKind;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "JSON experiment config")->check(CLI::ExistingFile);
  sub->add_option("--seed", o.seed, "experiment seed (overrides the config)");
  sub->add_option("--out", o.out, "output directory (overrides the config)");
}

int run(ExperimentKind kind, const Options& o) {
  auto cfg = o.config.empty() ? d3::harness::ExperimentConfig{} : d3::harness::load_config(o.config);
  cfg.kind = kind;
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.out_dir = o.out;
  cfg.validate();
  const auto artifacts = d3::harness::run_experiment(cfg);
  d3::harness::write_artifacts(artifacts, cfg.out_dir);
  std::cout << "wrote " << (std::filesystem::path(cfg.out_dir) / "report.json").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"D3 discrepancy deepfake detector on a synthetic benchmark"};
  app.require_subcommand(1);
  Options opts;
  std::optional<ExperimentKind> chosen;

  auto simple = [&](const char* name, const char* help, ExperimentKind kind) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub, opts);
    sub->callback([&chosen, kind] { chosen = kind; });
  };
  simple("synth", "build the benchmark manifest (and optionally images)", ExperimentKind::synth);
  simple("train", "train a head and evaluate it on the test split", ExperimentKind::train_eval);
  simple("eval", "evaluate a saved checkpoint", ExperimentKind::eval);
  simple("scale-sweep", "OOD accuracy against the number of train generators", ExperimentKind::scale_sweep);
  simple("robust", "accuracy under blur and JPEG degradation", ExperimentKind::robustness);
  simple("occlude", "occlusion sensitivity maps", ExperimentKind::occlusion);
  simple("report", "collect report.json files below --out", ExperimentKind::report);

  auto* ablate = app.add_subcommand("ablate", "ablation studies");
  ablate->require_subcommand(1);
  const std::pair<const char*, ExperimentKind> ablations[] = {
      {"disruption", ExperimentKind::disruption_ablation},
      {"patch-size", ExperimentKind::patch_size_ablation},
      {"head", ExperimentKind::head_ablation},
      {"branch", ExperimentKind::branch_ablation},
  };
  for (const auto& [name, kind] : ablations) {
    auto* sub = ablate->add_subcommand(name, std::string(name) + " ablation");
    add_common(sub, opts);
    sub->callback([&chosen, kind = kind] { chosen = kind; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    return run(*chosen, opts);
  } catch (const d3::InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
