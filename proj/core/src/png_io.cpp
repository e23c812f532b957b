// SPDX-License-Identifier: Apache-2.0
#include "seggroup/png_io.hpp"

#include <csetjmp>
#include <cstring>
#include <string>

#include <png.h>

#include "seggroup/tensor_io.hpp"

namespace seggroup {

namespace {

struct ReadCursor {
  const std::vector<std::byte>* data;
  std::size_t pos;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t n) {
  auto* cursor = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cursor->pos + n > cursor->data->size()) png_error(png, "unexpected end of PNG data");
  std::memcpy(out, cursor->data->data() + cursor->pos, n);
  cursor->pos += n;
}

void write_to_memory(png_structp png, png_bytep in, png_size_t n) {
  auto* out = static_cast<std::vector<std::byte>*>(png_get_io_ptr(png));
  const auto* b = reinterpret_cast<const std::byte*>(in);
  out->insert(out->end(), b, b + n);
}

void flush_noop(png_structp) {}

void warning_noop(png_structp, png_const_charp) {}

struct Decoded {
  int width = 0;
  int height = 0;
  int color_type = 0;
  int channels = 0;
  std::vector<std::uint8_t> rows;
};

// to_rgb: expand palette/gray to RGB; otherwise keep raw indices.
Decoded decode(const std::filesystem::path& path, bool to_rgb) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
    throw DataError("'" + path.string() + "' is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, warning_noop);
  if (!png) throw DataError("libpng: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng: cannot create info struct");
  }

  Decoded result;
  ReadCursor cursor{&bytes, 0};
  std::vector<png_bytep> row_ptrs;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG '" + path.string() + "'");
  }
  png_set_read_fn(png, &cursor, read_from_memory);
  png_read_info(png, info);

  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (to_rgb) {
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  } else {
    if (color_type != PNG_COLOR_TYPE_PALETTE && color_type != PNG_COLOR_TYPE_GRAY) {
      png_destroy_read_struct(&png, &info, nullptr);
      throw DataError("'" + path.string() + "' is not a gray or paletted PNG");
    }
  }
  if (bit_depth < 8) png_set_packing(png);
  png_read_update_info(png, info);

  result.width = static_cast<int>(png_get_image_width(png, info));
  result.height = static_cast<int>(png_get_image_height(png, info));
  result.color_type = color_type;
  result.channels = png_get_channels(png, info);
  const auto rowbytes = png_get_rowbytes(png, info);
  result.rows.resize(rowbytes * result.height);
  row_ptrs.resize(result.height);
  for (int y = 0; y < result.height; ++y) row_ptrs[y] = result.rows.data() + rowbytes * y;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return result;
}

std::vector<std::byte> encode(int width, int height, int color_type, const std::uint8_t* pixels,
                              int channels, const Palette* palette) {
  std::vector<std::byte> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, warning_noop);
  if (!png) throw DataError("libpng: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng: cannot create info struct");
  }
  std::vector<png_color> colors;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG encoding failed");
  }
  png_set_write_fn(png, &out, write_to_memory, flush_noop);
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  if (palette) {
    for (const auto& c : *palette) colors.push_back(png_color{c[0], c[1], c[2]});
    png_set_PLTE(png, info, colors.data(), static_cast<int>(colors.size()));
  }
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(pixels + stride * y));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::vector<std::uint8_t> ids_to_bytes(const IdGrid& ids) {
  std::vector<std::uint8_t> bytes(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto v = ids.cells[i];
    if (v < 0 || v > 255) throw PreconditionError("id " + std::to_string(v) + " does not fit in 8 bits");
    bytes[i] = static_cast<std::uint8_t>(v);
  }
  return bytes;
}

}  // namespace

Raster8 read_png_rgb(const std::filesystem::path& path) {
  auto d = decode(path, true);
  if (d.channels != 3) throw DataError("'" + path.string() + "': unexpected channel count after decoding");
  return Raster8{d.height, d.width, 3, std::move(d.rows)};
}

IdGrid read_png_indices(const std::filesystem::path& path) {
  auto d = decode(path, false);
  IdGrid grid(d.height, d.width);
  for (std::size_t i = 0; i < grid.size(); ++i) grid.cells[i] = d.rows[i];
  return grid;
}

void write_png_rgb(const std::filesystem::path& path, const Raster8& image) {
  if (image.channels != 3) throw PreconditionError("write_png_rgb expects 3 channels");
  write_file_atomic(path, encode(image.width, image.height, PNG_COLOR_TYPE_RGB, image.pixels.data(), 3, nullptr));
}

void write_png_gray(const std::filesystem::path& path, const IdGrid& ids) {
  const auto bytes = ids_to_bytes(ids);
  write_file_atomic(path, encode(ids.width, ids.height, PNG_COLOR_TYPE_GRAY, bytes.data(), 1, nullptr));
}

void write_png_paletted(const std::filesystem::path& path, const IdGrid& ids, const Palette& palette) {
  if (palette.empty() || palette.size() > 256) throw PreconditionError("palette must hold 1..256 colors");
  const auto bytes = ids_to_bytes(ids);
  for (auto b : bytes)
    if (b >= palette.size()) throw PreconditionError("label id outside palette");
  write_file_atomic(path, encode(ids.width, ids.height, PNG_COLOR_TYPE_PALETTE, bytes.data(), 1, &palette));
}

Palette label_palette() {
  Palette palette(256);
  for (int i = 0; i < 256; ++i) {
    int r = 0, g = 0, b = 0, id = i;
    for (int j = 0; j < 8; ++j) {
      r |= ((id >> 0) & 1) << (7 - j);
      g |= ((id >> 1) & 1) << (7 - j);
      b |= ((id >> 2) & 1) << (7 - j);
      id >>= 3;
    }
    palette[i] = {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(b)};
  }
  palette[255] = {224, 224, 192};
  return palette;
}

}  // namespace seggroup
