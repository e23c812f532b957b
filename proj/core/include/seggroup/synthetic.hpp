// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale shape corpus: colored objects over textured two-stuff
// backgrounds. Captions name a strict, non-empty subset of the rendered
// objects and never the background, so every image carries objects without
// a matching noun.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "seggroup/alignment.hpp"
#include "seggroup/png_io.hpp"

namespace seggroup {

enum class Shape { circle, square, triangle, diamond, ellipse, cross };

struct ObjectClass {
  std::string name;
  std::array<std::uint8_t, 3> color;
  Shape shape;
};

struct StuffClass {
  std::string name;
  std::array<std::uint8_t, 3> color;
};

const std::vector<ObjectClass>& synthetic_objects();
const std::vector<StuffClass>& synthetic_stuff();
/// Words ignored by the noun matcher for synthetic captions.
const std::vector<std::string>& synthetic_stopwords();

struct SyntheticOptions {
  int num_images = 96;
  int image_size = 224;
  int min_objects = 2;
  int max_objects = 4;
  double noise = 0.04;
  /// Object radius range as a fraction of image_size.
  double min_radius = 0.12;
  double max_radius = 0.2;
  /// Objects left out of each caption; 0 draws the caption size uniformly from [1, objects - 1].
  int unmentioned = 0;
  std::uint64_t seed = 0;
};

struct SyntheticSample {
  std::string stem;
  Raster8 image;
  IdGrid gt;  // 0 = background (stuff), i + 1 = synthetic_objects()[i]
  CaptionRecord caption;
  std::vector<std::string> rendered;   // object class names drawn in the image
  std::vector<std::string> mentioned;  // object class names named in the caption
};

/// Deterministic in (options, index).
SyntheticSample render_sample(int index, const SyntheticOptions& options);
std::vector<SyntheticSample> synthesize_corpus(const SyntheticOptions& options);

/// Writes images/, gt/, captions.jsonl, categories.txt, background_pool.txt, lexicon.txt, stopwords.txt.
void write_corpus(const std::filesystem::path& dir, const std::vector<SyntheticSample>& samples);

}  // namespace seggroup
