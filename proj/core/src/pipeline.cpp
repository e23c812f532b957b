// SPDX-License-Identifier: Apache-2.0
#include "seggroup/pipeline.hpp"

#include <cmath>

#include <spdlog/spdlog.h>

#include "seggroup/error.hpp"

namespace seggroup {

PatchFeatureMap patch_features(const VisionEncoder& vision, const Image& image) {
  auto stream = vision.encode_patches(image);
  return PatchFeatureMap{stream.grid_height, stream.grid_width, image.size(), std::move(stream.features)};
}

GroupedImage group_image(const VisionEncoder& vision, const Image& image, const Preprocessing& prep,
                         const GroupingSettings& settings, const Codebook* codebook,
                         const PatchFeatureMap* external) {
  GroupedImage out;
  out.prepared = prepare_image(image, prep);
  const Size2 size = out.prepared.image.size();
  if (external) {
    external->validate();
    const int p = vision.config().patch_size;
    if (external->grid_height != size.height / p || external->grid_width != size.width / p)
      throw DataError("external features grid " + std::to_string(external->grid_height) + "x" +
                      std::to_string(external->grid_width) + " does not match the prepared image grid " +
                      std::to_string(size.height / p) + "x" + std::to_string(size.width / p));
    out.features = *external;
    out.features.image_size = size;
  } else {
    out.features = patch_features(vision, out.prepared.image);
  }

  if (settings.per_image) {
    auto clustering = per_image_kmeans(out.features, settings.num_regions, settings.seed, settings.metric);
    out.warnings = clustering.warnings;
    out.masks = upsample_masks(out.features, clustering.low_res, clustering.centroids, size, settings.upsample);
    out.masks.shared_ids = false;
  } else {
    if (!codebook) throw PreconditionError("codebook mode needs a fitted codebook");
    if (codebook->dim() != out.features.dim())
      throw DataError("codebook dimension " + std::to_string(codebook->dim()) + " does not match feature dimension " +
                      std::to_string(out.features.dim()));
    const auto low_res = cluster_image(out.features, *codebook);
    out.masks = upsample_masks(out.features, low_res, *codebook, size, settings.upsample);
  }
  return out;
}

Recognizer build_recognizer(const CategorySet& categories, const TextEncoder& text) {
  categories.validate();
  Recognizer r;
  r.categories = categories;
  r.vocabulary = make_vocabulary(categories);
  r.embeddings = embed_categories(categories, text);
  return r;
}

SegmentedImage segment_image(const VisionEncoder& vision, const Image& image, const Preprocessing& prep,
                             const GroupingSettings& settings, const Codebook* codebook, const Recognizer& recognizer,
                             MaskingStrategy strategy, const RegionTokenBank* bank,
                             const PatchFeatureMap* external) {
  if (bank && settings.per_image) throw ConfigError("learned region tokens need codebook grouping");
  SegmentedImage out;
  out.grouped = group_image(vision, image, prep, settings, codebook, external);
  out.regions = vision.encode_regions(out.grouped.prepared.image, out.grouped.masks, strategy, bank);
  out.region_labels = classify_regions(out.regions.embeddings, recognizer.embeddings);
  // Omitted regions (no patch after downsampling) cannot be recognized; their pixels become ignore.
  auto labels = assemble_segmentation(out.grouped.masks, out.region_labels, recognizer.categories,
                                      !out.regions.omitted.empty());
  out.label_map.legend = std::move(labels.legend);
  out.label_map.labels = restore_grid(labels.labels, out.grouped.prepared);
  return out;
}

Raster8 overlay_labels(const Raster8& image, const IdGrid& labels, const Palette& palette, double alpha) {
  if (image.height != labels.height || image.width != labels.width)
    throw PreconditionError("overlay image and label map differ in shape");
  Raster8 out{image.height, image.width, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(image.height) *
                                                                       image.width * 3)};
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const int label = labels.at(y, x);
      for (int c = 0; c < 3; ++c) {
        const double base = image.at(y, x, image.channels == 1 ? 0 : c);
        const double v = label == kIgnoreLabel
                             ? base
                             : (1 - alpha) * base + alpha * palette[static_cast<std::size_t>(label)][c];
        out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v));
      }
    }
  }
  return out;
}

}  // namespace seggroup
