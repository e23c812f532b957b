// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "seggroup/image.hpp"
#include "seggroup/pipeline.hpp"
#include "seggroup/png_io.hpp"
#include "seggroup/tensor_io.hpp"

using namespace seggroup;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "seggroup_unit_image";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("RGB PNG round-trip is exact") {
  std::mt19937_64 rng(1);
  Raster8 r{17, 23, 3, {}};
  for (int i = 0; i < 17 * 23 * 3; ++i) r.pixels.push_back(static_cast<std::uint8_t>(testing::uniform_int(rng, 0, 255)));
  write_png_rgb(scratch("rgb.png"), r);
  const auto back = read_png_rgb(scratch("rgb.png"));
  CHECK(back.height == 17);
  CHECK(back.width == 23);
  CHECK(back.pixels == r.pixels);
}

TEST_CASE("gray and paletted index PNGs round-trip") {
  std::mt19937_64 rng(2);
  auto ids = testing::random_grid(rng, 9, 14, 21);
  ids.at(0, 0) = 255;
  write_png_gray(scratch("gray.png"), ids);
  CHECK(read_png_indices(scratch("gray.png")) == ids);
  write_png_paletted(scratch("pal.png"), ids, label_palette());
  CHECK(read_png_indices(scratch("pal.png")) == ids);
  // Paletted files decode to palette colors as RGB.
  const auto rgb = read_png_rgb(scratch("pal.png"));
  const auto palette = label_palette();
  CHECK(rgb.at(3, 4, 0) == palette[static_cast<std::size_t>(ids.at(3, 4))][0]);
}

TEST_CASE("label palette follows the bit-interleave scheme") {
  const auto p = label_palette();
  REQUIRE(p.size() == 256);
  CHECK(p[0] == std::array<std::uint8_t, 3>{0, 0, 0});
  CHECK(p[1] == std::array<std::uint8_t, 3>{128, 0, 0});
  CHECK(p[2] == std::array<std::uint8_t, 3>{0, 128, 0});
  CHECK(p[15] == std::array<std::uint8_t, 3>{192, 128, 128});
}

TEST_CASE("corrupt PNG input is a data error") {
  {
    std::ofstream out(scratch("bad.png"), std::ios::binary);
    out << "\x89PNG\r\n\x1a\nnot really";
  }
  CHECK_THROWS_AS(read_png_rgb(scratch("bad.png")), DataError);
  CHECK_THROWS_AS(read_png_rgb(scratch("missing.png")), DataError);
}

TEST_CASE("ids outside [0, 255] cannot be written as PNG") {
  IdGrid ids(2, 2, 0);
  ids.at(1, 1) = 256;
  CHECK_THROWS(write_png_gray(scratch("overflow.png"), ids));
}

TEST_CASE("preparation pads to patch multiples and restore_grid inverts it") {
  std::mt19937_64 rng(3);
  const auto image = testing::random_image(rng, 37, 50);
  const auto prepared = prepare_image(image, Preprocessing{16, 0});
  CHECK(prepared.image.height == 48);
  CHECK(prepared.image.width == 64);
  CHECK(prepared.original == Size2{37, 50});
  CHECK(prepared.content == Size2{37, 50});
  CHECK(prepared.image.at(10, 20, 1) == image.at(10, 20, 1));
  CHECK(prepared.image.at(40, 60, 0) == doctest::Approx(PixelStats{}.mean[0]));

  IdGrid grid(48, 64);
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 64; ++x) grid.at(y, x) = (y * 64 + x) % 200;
  const auto restored = restore_grid(grid, prepared);
  REQUIRE(restored.shape() == Size2{37, 50});
  CHECK(restored.at(36, 49) == grid.at(36, 49));
}

TEST_CASE("shorter-side resizing keeps the aspect ratio") {
  std::mt19937_64 rng(4);
  const auto prepared = prepare_image(testing::random_image(rng, 30, 60), Preprocessing{16, 64});
  CHECK(prepared.content == Size2{64, 128});
  CHECK(prepared.image.height == 64);
  CHECK(prepared.image.width == 128);
  CHECK(restore_grid(IdGrid(64, 128, 7), prepared) == IdGrid(30, 60, 7));
}

TEST_CASE("bilinear resize of a constant image stays constant") {
  Image img(5, 7, 3, 0.25);
  const auto out = resize_bilinear(img, 11, 3);
  for (double v : out.data) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("overlay keeps the input size and leaves ignore pixels untouched") {
  Raster8 r{4, 6, 3, std::vector<std::uint8_t>(72, 100)};
  IdGrid labels(4, 6, 3);
  labels.at(0, 0) = kIgnoreLabel;
  const auto out = overlay_labels(r, labels, label_palette(), 0.5);
  CHECK(out.height == 4);
  CHECK(out.width == 6);
  CHECK(out.at(0, 0, 0) == 100);
  CHECK(out.at(1, 1, 0) != 100);
}
