#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "fastkv/harness.hpp"

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumeric = 4 };

int run(const std::string& command, const std::string& config_path, const std::optional<std::string>& out_dir,
        const std::optional<std::uint64_t>& seed, const std::string& artifact) {
  auto cfg = fastkv::load_run_config(config_path);
  if (out_dir) cfg.out_dir = *out_dir;
  if (seed) cfg.set_master_seed(*seed);
  cfg.validate();

  if (command == "train") {
    const auto out = fastkv::cmd_train(cfg);
    for (const auto& l : out.trained.report.layers)
      std::cout << "layer " << l.layer << ": train bce " << l.initial_train_bce << " -> " << l.final_train_bce
                << ", val bce " << l.initial_val_bce << " -> " << l.final_val_bce << '\n';
    std::cout << "wrote " << out.gate_file.string() << " and " << out.report_file.string() << '\n';
  } else if (command == "eval") {
    const auto out = fastkv::cmd_eval(cfg);
    std::cout << fastkv::eval_csv(out.rows) << "wrote " << out.csv_file.string() << '\n';
  } else if (command == "analyze") {
    const auto out = fastkv::cmd_analyze(cfg);
    std::cout << "wrote " << out.retention_csv.string() << ", " << out.taxonomy_json.string() << ", "
              << out.tokens_csv.string() << '\n';
  } else if (command == "bench") {
    const auto out = fastkv::cmd_bench(cfg);
    std::cout << out.report.dump(2) << "\nwrote " << out.json_file.string() << '\n';
  } else if (command == "inspect") {
    std::cout << fastkv::cmd_inspect(cfg, artifact).dump(2) << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fastkv: learned KV-cache eviction on a toy transformer"};
  app.require_subcommand(1);

  std::string config_path, artifact;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  for (const char* name : {"train", "eval", "analyze", "bench", "inspect"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "TOML run configuration")->required();
    sub->add_option("--out", out_dir, "output directory (overrides output.dir)");
    sub->add_option("--seed", seed, "master seed (overrides the config's seed)");
    if (std::string(name) == "inspect") sub->add_option("--file", artifact, "FKVM/FKVZ/FKVT artifact to summarize");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, config_path, out_dir, seed, artifact);
  } catch (const fastkv::ConfigError& e) {
    std::cerr << "fastkv " << command << ": config error: " << e.what() << '\n';
    return kConfig;
  } catch (const fastkv::DataError& e) {
    std::cerr << "fastkv " << command << ": data error: " << e.what() << '\n';
    return kData;
  } catch (const fastkv::NumericError& e) {
    std::cerr << "fastkv " << command << ": numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "fastkv " << command << ": " << e.what() << '\n';
    return kOther;
  }
}
