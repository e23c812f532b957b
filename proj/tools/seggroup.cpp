// SPDX-License-Identifier: Apache-2.0
//
// seggroup {group|segment|finetune|eval|upper-bound|bench-masking|synthesize}
//          --config <file> [--set key=value ...]
//
// Exit codes: 0 success, 1 usage or config error, 2 data error.
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "seggroup/commands.hpp"
#include "seggroup/config.hpp"
#include "seggroup/error.hpp"

namespace {

constexpr int kUsageError = 1;
constexpr int kDataError = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Region grouping and open-vocabulary segmentation"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  std::string log_level = "info";

  for (const auto& name : seggroup::command_names()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--set", overrides, "override a config key, e.g. --set grouping.M=16")->take_all();
    sub->add_option("--log-level", log_level, "trace, debug, info, warn, error or off");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  spdlog::set_level(spdlog::level::from_str(log_level));
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const auto config = seggroup::load_config(config_path, overrides);
    const auto summary = seggroup::run_command(command, config);
    std::cout << summary.dump(2) << std::endl;
    return 0;
  } catch (const seggroup::DataError& e) {
    std::cerr << "seggroup " << command << ": data error: " << e.what() << std::endl;
    return kDataError;
  } catch (const seggroup::Error& e) {
    std::cerr << "seggroup " << command << ": " << e.what() << std::endl;
    return kUsageError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "seggroup " << command << ": data error: " << e.what() << std::endl;
    return kDataError;
  }
}
