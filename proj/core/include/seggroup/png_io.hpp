// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "seggroup/types.hpp"

namespace seggroup {

/// 8-bit interleaved raster (1 = gray, 3 = RGB).
struct Raster8 {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

using Palette = std::vector<std::array<std::uint8_t, 3>>;

/// Decodes any PNG into 8-bit RGB. Throws DataError on corrupt input.
Raster8 read_png_rgb(const std::filesystem::path& path);
/// Decodes a gray or paletted PNG into raw sample/index values (labels, assignment grids).
IdGrid read_png_indices(const std::filesystem::path& path);

void write_png_rgb(const std::filesystem::path& path, const Raster8& image);
/// Single-channel 8-bit; ids must lie in [0, 255].
void write_png_gray(const std::filesystem::path& path, const IdGrid& ids);
/// Paletted 8-bit; ids must lie in [0, 255] and index into the palette.
void write_png_paletted(const std::filesystem::path& path, const IdGrid& ids, const Palette& palette);

/// Deterministic 256-entry palette (PASCAL VOC bit-interleave scheme).
Palette label_palette();

}  // namespace seggroup
