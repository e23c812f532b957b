// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a JSON document merged over built-in defaults. Unknown
// keys are rejected, relative paths resolve against the config file's
// directory, and referenced input files must exist at load time.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seggroup/alignment.hpp"
#include "seggroup/encoder.hpp"
#include "seggroup/evaluation.hpp"
#include "seggroup/image.hpp"
#include "seggroup/pipeline.hpp"
#include "seggroup/synthetic.hpp"

namespace seggroup {

using OptPath = std::optional<std::filesystem::path>;

struct RecognitionSettings {
  OptPath category_file;
  OptPath background_pool_file;
  OptPath templates_file;
  MaskingStrategy strategy = MaskingStrategy::context_aware;
};

struct AdaptionSettings {
  AdaptionConfig optimizer;
  double val_fraction = 0.2;
  OptPath lexicon_file;
  OptPath stopwords_file;
};

struct PathSettings {
  OptPath features_dir;
  OptPath captions_jsonl;
  OptPath images_dir;
  OptPath gt_dir;
  std::filesystem::path out_dir = "out";
  OptPath codebook;
  OptPath token_bank;
};

struct BenchSettings {
  int num_regions = 8;
  int image_size = 224;
  BenchmarkOptions timing;
};

struct RunConfig {
  std::uint64_t seed = 0;
  EncoderConfig encoder;
  Preprocessing preprocessing;  // patch_size mirrors encoder.patch_size
  GroupingSettings grouping;
  RecognitionSettings recognition;
  AdaptionSettings adaption;
  PathSettings paths;
  SyntheticOptions synthesize;
  BenchSettings bench;

  nlohmann::json resolved;  // effective document after overrides and path resolution

  /// FNV-1a over the canonical dump of `resolved`, as 16 hex digits.
  std::string hash() const;
};

/// Built-in defaults as a JSON document (every accepted key appears here).
nlohmann::json default_config_json();

/// Applies a dotted `key=value` override; the value is parsed as JSON, falling back to a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Merges `user` over the defaults, applies overrides and the SEGGROUP_SEED environment variable,
/// resolves paths against `base_dir` and validates everything.
RunConfig resolve_config(const nlohmann::json& user, const std::vector<std::string>& overrides,
                         const std::filesystem::path& base_dir);

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace seggroup
