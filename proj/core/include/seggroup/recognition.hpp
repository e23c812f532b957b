// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seggroup/encoder.hpp"
#include "seggroup/region_masks.hpp"

namespace seggroup {

struct CategorySet {
  std::vector<std::string> names;
  std::vector<std::string> templates;
  std::vector<std::string> background_pool;  // used only to detect background

  void validate() const;
};

/// "a photo of a {}.", "a photo of the {}.", "an image of a {}."
std::vector<std::string> default_templates();

/// Throws ConfigError unless the template has exactly one "{}".
void check_template(std::string_view tmpl);
std::string fill_template(std::string_view tmpl, std::string_view name);

/// One name per line; blank lines skipped; "# templates:" starts a block of "# <template>" lines;
/// other '#' lines are comments.
struct CategoryFile {
  std::vector<std::string> names;
  std::vector<std::string> templates;
};
CategoryFile parse_category_text(std::string_view text);
CategoryFile load_category_file(const std::filesystem::path& path);
/// One entry per non-empty line, trimmed.
std::vector<std::string> load_word_list(const std::filesystem::path& path);

/// Fill every template, encode, average, re-normalize. Rows follow `names`.
Matrix embed_prompts(std::span<const std::string> names, std::span<const std::string> templates,
                     const TextEncoder& text_encoder);

std::vector<TextEmbedding> embed_categories(const CategorySet& categories, const TextEncoder& text_encoder);

/// Classification targets: names first, then background_pool entries not already in names.
struct Vocabulary {
  std::vector<std::string> entries;
  int num_foreground = 0;
  bool has_background = false;

  /// Label id written to the label map for vocabulary entry `index`.
  int label_for(int index) const;
  int num_labels() const { return num_foreground + (has_background ? 1 : 0); }
  std::map<int, std::string> legend() const;
};

Vocabulary make_vocabulary(const CategorySet& categories);

struct RegionLabel {
  int region_id = 0;
  int category = 0;  // index into the embeddings passed to classify_regions
  double similarity = 0;
};

/// Argmax cosine similarity per region; ties go to the lowest category index.
std::vector<RegionLabel> classify_regions(std::span<const RegionEmbedding> regions,
                                          std::span<const TextEmbedding> categories);

struct LabelMap {
  IdGrid labels;
  std::map<int, std::string> legend;  // label id -> name; 255 is ignore
};

/// Every pixel inherits its region's label. `region_labels` index into make_vocabulary(categories).
/// Throws PreconditionError when a region in high_res has no label, unless `missing_as_ignore`.
LabelMap assemble_segmentation(const RegionMaskSet& masks, std::span<const RegionLabel> region_labels,
                               const CategorySet& categories, bool missing_as_ignore = false);

void save_label_map(const std::filesystem::path& png_path, const std::filesystem::path& legend_path,
                    const LabelMap& map);

}  // namespace seggroup
