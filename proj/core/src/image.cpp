// SPDX-License-Identifier: Apache-2.0
#include "seggroup/image.hpp"

#include <algorithm>
#include <cmath>

namespace seggroup {

Image image_from_raster(const Raster8& raster) {
  if (raster.channels != 3) throw PreconditionError("expected an RGB raster");
  Image image(raster.height, raster.width, 3);
  for (std::size_t i = 0; i < raster.pixels.size(); ++i) image.data[i] = raster.pixels[i] / 255.0;
  return image;
}

Raster8 raster_from_image(const Image& image) {
  Raster8 raster{image.height, image.width, image.channels, {}};
  raster.pixels.resize(image.data.size());
  for (std::size_t i = 0; i < image.data.size(); ++i)
    raster.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.data[i], 0.0, 1.0) * 255.0));
  return raster;
}

Image resize_bilinear(const Image& image, int height, int width) {
  if (height <= 0 || width <= 0) throw PreconditionError("resize target must be positive");
  if (height == image.height && width == image.width) return image;
  Image out(height, width, image.channels);
  const double sy = static_cast<double>(image.height) / height;
  const double sx = static_cast<double>(image.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < image.channels; ++c) {
        const double top = image.at(y0, x0, c) * (1 - wx) + image.at(y0, x1, c) * wx;
        const double bottom = image.at(y1, x0, c) * (1 - wx) + image.at(y1, x1, c) * wx;
        out.at(y, x, c) = top * (1 - wy) + bottom * wy;
      }
    }
  }
  return out;
}

IdGrid resize_nearest(const IdGrid& grid, int height, int width) {
  if (height == grid.height && width == grid.width) return grid;
  IdGrid out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(grid.height - 1, static_cast<int>((y + 0.5) * grid.height / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(grid.width - 1, static_cast<int>((x + 0.5) * grid.width / width));
      out.at(y, x) = grid.at(sy, sx);
    }
  }
  return out;
}

IdGrid crop(const IdGrid& grid, int height, int width) {
  if (height > grid.height || width > grid.width) throw PreconditionError("crop larger than grid");
  IdGrid out(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) out.at(y, x) = grid.at(y, x);
  return out;
}

PreparedImage prepare_image(const Image& image, const Preprocessing& prep, const PixelStats& stats) {
  if (prep.patch_size < 1) throw ConfigError("patch_size must be >= 1");
  if (image.channels != 3) throw PreconditionError("expected a 3-channel image");
  PreparedImage out;
  out.original = image.size();
  Image resized = image;
  if (prep.shorter_side > 0) {
    const int shorter = std::min(image.height, image.width);
    const double scale = static_cast<double>(prep.shorter_side) / shorter;
    const int h = std::max(1, static_cast<int>(std::lround(image.height * scale)));
    const int w = std::max(1, static_cast<int>(std::lround(image.width * scale)));
    resized = resize_bilinear(image, h, w);
  }
  out.content = resized.size();
  const int p = prep.patch_size;
  const int h = (resized.height + p - 1) / p * p;
  const int w = (resized.width + p - 1) / p * p;
  if (h == resized.height && w == resized.width) {
    out.image = std::move(resized);
    return out;
  }
  out.image = Image(h, w, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.image.at(y, x, c) = (y < resized.height && x < resized.width) ? resized.at(y, x, c) : stats.mean[c];
  return out;
}

IdGrid restore_grid(const IdGrid& grid, const PreparedImage& prepared) {
  const auto cropped = crop(grid, prepared.content.height, prepared.content.width);
  return resize_nearest(cropped, prepared.original.height, prepared.original.width);
}

}  // namespace seggroup
