// SPDX-License-Identifier: Apache-2.0
//
// Per-image glue shared by the commands: preprocessing, grouping, region
// encoding and labeling.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seggroup/encoder.hpp"
#include "seggroup/grouping.hpp"
#include "seggroup/image.hpp"
#include "seggroup/png_io.hpp"
#include "seggroup/recognition.hpp"
#include "seggroup/region_masks.hpp"

namespace seggroup {

struct GroupingSettings {
  int num_regions = 27;
  Metric metric = Metric::cosine;
  bool per_image = false;  // k-means per image instead of a shared codebook
  std::uint64_t seed = 0;
  UpsampleMode upsample = UpsampleMode::bilinear;
};

struct GroupedImage {
  PreparedImage prepared;
  PatchFeatureMap features;
  RegionMaskSet masks;
  std::vector<std::string> warnings;
};

/// Final-layer patch features of an already patch-aligned image.
PatchFeatureMap patch_features(const VisionEncoder& vision, const Image& image);

/// `codebook` is required unless settings.per_image. `external` replaces the encoder's features.
GroupedImage group_image(const VisionEncoder& vision, const Image& image, const Preprocessing& prep,
                         const GroupingSettings& settings, const Codebook* codebook,
                         const PatchFeatureMap* external = nullptr);

struct Recognizer {
  CategorySet categories;
  Vocabulary vocabulary;
  std::vector<TextEmbedding> embeddings;  // one per vocabulary entry
};

Recognizer build_recognizer(const CategorySet& categories, const TextEncoder& text);

struct SegmentedImage {
  GroupedImage grouped;
  RegionEncoding regions;
  std::vector<RegionLabel> region_labels;
  LabelMap label_map;  // at the original image size
};

/// A token bank requires codebook mode.
SegmentedImage segment_image(const VisionEncoder& vision, const Image& image, const Preprocessing& prep,
                             const GroupingSettings& settings, const Codebook* codebook, const Recognizer& recognizer,
                             MaskingStrategy strategy, const RegionTokenBank* bank,
                             const PatchFeatureMap* external = nullptr);

/// Blends label colors over the image; ignore pixels stay untouched.
Raster8 overlay_labels(const Raster8& image, const IdGrid& labels, const Palette& palette, double alpha = 0.5);

}  // namespace seggroup
