// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

#include "seggroup/png_io.hpp"
#include "seggroup/types.hpp"

namespace seggroup {

/// HWC image with values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c = 3, double fill = 0.0)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  Size2 size() const { return {height, width}; }
};

/// Per-channel statistics used to normalize pixels before patch embedding.
struct PixelStats {
  std::array<double, 3> mean{0.48145466, 0.4578275, 0.40821073};
  std::array<double, 3> stddev{0.26862954, 0.26130258, 0.27577711};
};

Image image_from_raster(const Raster8& raster);
Raster8 raster_from_image(const Image& image);

Image resize_bilinear(const Image& image, int height, int width);
IdGrid resize_nearest(const IdGrid& grid, int height, int width);
IdGrid crop(const IdGrid& grid, int height, int width);

/// How images are brought to patch-aligned sizes.
struct Preprocessing {
  int patch_size = 16;
  /// Resize so the shorter side equals this many pixels; 0 keeps the original size.
  int shorter_side = 0;
};

struct PreparedImage {
  Image image;    // patch-aligned, padded with the dataset mean
  Size2 original; // size before any resizing
  Size2 content;  // size after resizing, before padding
};

PreparedImage prepare_image(const Image& image, const Preprocessing& prep, const PixelStats& stats = {});

/// Maps a grid defined on a prepared image back onto the original image.
IdGrid restore_grid(const IdGrid& grid, const PreparedImage& prepared);

}  // namespace seggroup
