// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include "oracles.hpp"
#include "seggroup/grouping.hpp"
#include "seggroup/tensor_io.hpp"

using namespace seggroup;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "seggroup_unit_tensor_io";
  fs::create_directories(dir);
  return dir / name;
}

bool same_bits(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

PatchFeatureMap sample_map(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PatchFeatureMap map;
  map.grid_height = 3;
  map.grid_width = 4;
  map.image_size = {48, 64};
  map.features = testing::random_matrix(rng, 12, 5);
  return map;
}

}  // namespace

TEST_CASE("tensor container round-trips every dtype and the metadata") {
  TensorFile file;
  file.metadata = {{"note", "x"}, {"n", 3}};
  const std::vector<double> f = {1.5, -2.25, std::numeric_limits<double>::denorm_min()};
  const std::vector<std::int32_t> i = {-7, 0, 255, 1 << 30};
  file.put_f64("f", {3}, f);
  file.put_i32("i", {2, 2}, i);
  const auto bytes = file.serialize();
  const auto back = TensorFile::deserialize(bytes);
  CHECK(back.metadata == file.metadata);
  CHECK(back.get_f64("f") == f);
  CHECK(back.get_i32("i") == i);
  CHECK(back.entry("i").shape == std::vector<std::int64_t>{2, 2});
  CHECK(back.serialize() == bytes);
}

TEST_CASE("feature map save/load is bit-identical") {
  const auto map = sample_map(3);
  const auto path = scratch("features.tensors");
  save_features(path, map);
  const auto back = load_external_features(path);
  CHECK(back.grid_height == 3);
  CHECK(back.grid_width == 4);
  CHECK(back.image_size == map.image_size);
  CHECK(same_bits(back.features, map.features));
}

TEST_CASE("truncated tensor files raise a format error") {
  const auto path = scratch("truncated.tensors");
  save_features(path, sample_map(4));
  const auto bytes = read_file_bytes(path);
  for (std::size_t keep : {std::size_t{0}, std::size_t{4}, std::size_t{12}, bytes.size() / 2, bytes.size() - 1}) {
    write_file_atomic(path, std::span<const std::byte>(bytes.data(), keep));
    CHECK_THROWS_AS(load_external_features(path), FormatError);
  }
}

TEST_CASE("non-finite features are rejected with the offending index") {
  auto map = sample_map(5);
  map.features(6, 2) = std::numeric_limits<double>::quiet_NaN();  // grid (1, 2), channel 2
  const auto path = scratch("nan.tensors");
  save_features(path, map);
  try {
    load_external_features(path);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("(1, 2, 2)") != std::string::npos);
  }
}

TEST_CASE("codebook and token bank checkpoints round-trip") {
  std::mt19937_64 rng(8);
  Codebook cb;
  cb.centroids = testing::random_matrix(rng, 6, 4);
  cb.centroids.rowwise().normalize();
  cb.metric = Metric::cosine;
  cb.seed = 42;
  save_codebook(scratch("cb.tensors"), cb);
  const auto cb2 = load_codebook(scratch("cb.tensors"));
  CHECK(same_bits(cb2.centroids, cb.centroids));
  CHECK(cb2.metric == Metric::cosine);
  CHECK(cb2.seed == 42);

  auto bank = RegionTokenBank::zeros(6, 4);
  bank.tokens = testing::random_matrix(rng, 6, 4);
  bank.logit_scale = 3.25;
  save_token_bank(scratch("bank.tensors"), bank, 17);
  const auto [bank2, step] = load_token_bank(scratch("bank.tensors"));
  CHECK(step == 17);
  CHECK(same_bits(bank2.tokens, bank.tokens));
  CHECK(bank2.logit_scale == bank.logit_scale);
  CHECK_THROWS_AS(load_token_bank(scratch("cb.tensors")), FormatError);
}

TEST_CASE("token bank starts from zeros with the initial temperature") {
  const auto bank = RegionTokenBank::zeros(5, 3);
  CHECK(bank.tokens.isZero(0));
  CHECK(bank.inverse_temperature() == doctest::Approx(RegionTokenBank::kInitialInverseTemperature).epsilon(1e-12));
  auto hot = bank;
  hot.logit_scale = 10.0;
  CHECK(hot.inverse_temperature() == RegionTokenBank::kMaxInverseTemperature);
  CHECK_THROWS_AS(RegionTokenBank::zeros(0, 3), ConfigError);
}
