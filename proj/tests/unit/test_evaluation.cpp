// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "oracles.hpp"
#include "seggroup/evaluation.hpp"

using namespace seggroup;

namespace {

IdGrid grid2x2(int a, int b, int c, int d) {
  IdGrid g(2, 2);
  g.cells = {a, b, c, d};
  return g;
}

}  // namespace

TEST_CASE("confusion counts") {
  std::mt19937_64 rng(1);
  const auto g = testing::random_grid(rng, 4, 4, 3);
  ConfusionAccumulator acc(3);
  acc.accumulate(g, g);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) CHECK(acc.at(i, j) == 0);
  CHECK(acc.total() == 16);

  ConfusionAccumulator ignored(3);
  ignored.accumulate(g, IdGrid(4, 4, kIgnoreLabel));
  CHECK(ignored.total() == 0);

  ConfusionAccumulator mixed(2);
  mixed.accumulate(grid2x2(0, 1, 1, 1), grid2x2(0, 0, 1, 1));
  CHECK(mixed.matrix() == std::vector<std::int64_t>{1, 1, 0, 2});

  CHECK_THROWS_AS(mixed.accumulate(IdGrid(2, 3), IdGrid(2, 2)), PreconditionError);
  CHECK_THROWS_AS(mixed.accumulate(grid2x2(0, 5, 0, 0), grid2x2(0, 0, 0, 0)), PreconditionError);
}

TEST_CASE("mIoU by hand") {
  ConfusionAccumulator acc(2);
  acc.accumulate(grid2x2(0, 1, 1, 1), grid2x2(0, 0, 1, 1));
  const auto r = miou(acc);
  CHECK(*r.per_class_iou[0] == doctest::Approx(0.5));
  CHECK(*r.per_class_iou[1] == doctest::Approx(2.0 / 3.0));
  CHECK(std::abs(r.miou - 100.0 * (0.5 + 2.0 / 3.0) / 2) < 1e-9);
  CHECK(r.pixel_accuracy == doctest::Approx(75.0));

  ConfusionAccumulator perfect(4);
  perfect.accumulate(grid2x2(0, 1, 1, 3), grid2x2(0, 1, 1, 3));
  CHECK(miou(perfect).miou == 100.0);
  CHECK(!miou(perfect).per_class_iou[2]);  // absent from gt and pred

  CHECK_THROWS_AS(miou(ConfusionAccumulator(3)), PreconditionError);
}

TEST_CASE("mIoU agrees with pixel loops and merging equals pooling") {
  for (std::uint64_t s = 0; s < 30; ++s) {
    std::mt19937_64 rng(s);
    const int classes = testing::uniform_int(rng, 2, 6);
    const int n = testing::uniform_int(rng, 1, 6);
    ConfusionAccumulator all(classes), left(classes), right(classes);
    IdGrid pooled_pred(0, 5), pooled_gt(0, 5);
    for (int i = 0; i < n; ++i) {
      const int h = testing::uniform_int(rng, 1, 5);
      const auto pred = testing::random_grid(rng, h, 5, classes);
      auto gt = testing::random_grid(rng, h, 5, classes);
      if (s % 3 == 0) gt.cells[0] = kIgnoreLabel;
      all.accumulate(pred, gt);
      (testing::uniform_int(rng, 0, 1) ? left : right).accumulate(pred, gt);
      pooled_pred.cells.insert(pooled_pred.cells.end(), pred.cells.begin(), pred.cells.end());
      pooled_gt.cells.insert(pooled_gt.cells.end(), gt.cells.begin(), gt.cells.end());
      pooled_pred.height += h;
      pooled_gt.height += h;
    }
    left.merge(right);
    CHECK(left.matrix() == all.matrix());
    CHECK(left.images() == all.images());
    CHECK(std::abs(miou(all).miou - testing::brute_miou(pooled_pred, pooled_gt, classes, kIgnoreLabel)) < 1e-9);
  }
}

TEST_CASE("upper bound of the ground-truth partition is perfect") {
  std::mt19937_64 rng(2);
  const auto gt = testing::random_grid(rng, 8, 8, 4);
  auto masks = testing::masks_from_low_res(gt, 1, 4);
  CHECK(upper_bound(masks, gt, 4) == 100.0);
}

TEST_CASE("a straddling region takes its majority label") {
  // Region 0 covers 6 pixels of class 1 and 4 of class 2; region 1 is pure class 2.
  IdGrid regions(1, 14, 0), gt(1, 14, 1);
  for (int x = 6; x < 14; ++x) gt.at(0, x) = 2;
  for (int x = 10; x < 14; ++x) regions.at(0, x) = 1;
  const auto labels = upper_bound_labels(regions, gt);
  CHECK(labels == testing::brute_majority(regions, gt, 3, kIgnoreLabel, 0));
  CHECK(labels.at(0, 0) == 1);
  CHECK(labels.at(0, 13) == 2);
  // Class 1: 6 hits over 10 predicted; class 2: 4 hits over 8 in gt.
  ConfusionAccumulator acc(3);
  acc.accumulate(labels, gt);
  CHECK(miou(acc).miou == doctest::Approx(100.0 * (0.6 + 0.5) / 2));

  IdGrid ignore_gt(1, 14, kIgnoreLabel);
  CHECK(upper_bound_labels(regions, ignore_gt).at(0, 0) == kIgnoreLabel);
  CHECK(upper_bound_labels(regions, ignore_gt, {kIgnoreLabel, 0}).at(0, 0) == 0);
}

TEST_CASE("majority labels match the brute-force count on random partitions") {
  for (std::uint64_t s = 0; s < 30; ++s) {
    std::mt19937_64 rng(s);
    const auto regions = testing::random_grid(rng, 6, 7, 5);
    auto gt = testing::random_grid(rng, 6, 7, 4);
    gt.cells[3] = kIgnoreLabel;
    CHECK(upper_bound_labels(regions, gt, {kIgnoreLabel, 0}) == testing::brute_majority(regions, gt, 4, kIgnoreLabel, 0));
  }
}

TEST_CASE("benchmark report structure") {
  const VisionEncoder v(EncoderConfig{}, 0);
  std::mt19937_64 rng(3);
  IdGrid low(4, 4);
  for (int i = 0; i < 16; ++i) low.cells[static_cast<std::size_t>(i)] = i % 4;
  const auto masks = testing::masks_from_low_res(low, 16, 4);
  const std::vector<MaskingStrategy> all = {MaskingStrategy::pixel_mask, MaskingStrategy::token_mask,
                                            MaskingStrategy::context_aware};
  const auto t = benchmark_masking(v, testing::random_image(rng, 64, 64), masks, all, {1, 3});
  REQUIRE(t.size() == 3);
  CHECK(t[0].passes == 4);
  CHECK(t[1].passes == 1);
  CHECK(t[2].passes == 1);
  CHECK(t[2].fidelity_cosine == doctest::Approx(1.0));
  CHECK(t[0].samples_ms.size() == 3);
  const auto report = benchmark_report(t, 4);
  CHECK(report.dump().find("pixel_mask") != std::string::npos);
  CHECK_THROWS_AS(benchmark_masking(v, testing::random_image(rng, 64, 64), masks, all, {0, 0}), ConfigError);
}
