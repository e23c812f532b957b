// SPDX-License-Identifier: Apache-2.0
//
// Batch commands behind the CLI. Each writes its outputs, the resolved
// config (config.json) and a manifest.json into paths.out_dir, and returns
// the summary it wrote. Per-image data errors are recorded in the manifest
// and the run continues; a run where every input fails throws DataError.
#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "seggroup/config.hpp"

namespace seggroup {

nlohmann::json run_group(const RunConfig& config);
nlohmann::json run_segment(const RunConfig& config);
nlohmann::json run_finetune(const RunConfig& config);
nlohmann::json run_eval(const RunConfig& config);
nlohmann::json run_upper_bound(const RunConfig& config);
nlohmann::json run_bench_masking(const RunConfig& config);
nlohmann::json run_synthesize(const RunConfig& config);

const std::vector<std::string>& command_names();
/// Dispatches by name; throws ConfigError for an unknown command.
nlohmann::json run_command(std::string_view name, const RunConfig& config);

}  // namespace seggroup
