// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstring>
#include <limits>

#include "oracles.hpp"
#include "seggroup/grouping.hpp"

using namespace seggroup;

namespace {

PatchFeatureMap feature_map(const Matrix& features, int gh, int gw, int patch = 16) {
  PatchFeatureMap m;
  m.grid_height = gh;
  m.grid_width = gw;
  m.image_size = {gh * patch, gw * patch};
  m.features = features;
  return m;
}

// Nearest centroid by direct scan; ties toward the lowest id.
int nearest(const Vector& x, const Codebook& cb) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < cb.size(); ++k) {
    const double d = metric_distance(x, cb.centroids.row(k).transpose(), cb.metric);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("k-means with as many clusters as points has zero SSE") {
  std::mt19937_64 rng(1);
  const Matrix pts = testing::random_matrix(rng, 6, 3);
  const auto r = kmeans(pts, 6, Metric::euclidean, 0);
  CHECK(r.sse.back() == doctest::Approx(0.0).epsilon(1e-12));
  for (int i = 0; i < 6; ++i) CHECK((r.centroids.row(r.labels[i]) - pts.row(i)).norm() < 1e-12);
}

TEST_CASE("2D toy set splits into its two columns") {
  Matrix pts(4, 2);
  pts << 0, 0, 0, 1, 10, 0, 10, 1;
  const auto oracle = testing::brute_two_partition(pts);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = kmeans(pts, 2, Metric::euclidean, seed);
    CHECK(r.labels[0] == r.labels[1]);
    CHECK(r.labels[2] == r.labels[3]);
    CHECK(r.labels[0] != r.labels[2]);
    for (int i = 0; i < 4; ++i) CHECK((r.labels[i] == r.labels[0]) == (oracle[static_cast<std::size_t>(i)] == 0));
    const int left = r.centroids(0, 0) < 5 ? 0 : 1;
    CHECK(r.centroids(left, 0) == doctest::Approx(0.0));
    CHECK(r.centroids(left, 1) == doctest::Approx(0.5));
    CHECK(r.centroids(1 - left, 0) == doctest::Approx(10.0));
    CHECK(r.centroids(1 - left, 1) == doctest::Approx(0.5));
  }
}

TEST_CASE("k-means is deterministic and its SSE never increases") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    std::mt19937_64 rng(s);
    const int n = testing::uniform_int(rng, 10, 60), d = testing::uniform_int(rng, 1, 6);
    const int k = testing::uniform_int(rng, 1, std::min(n, 9));
    const Matrix pts = testing::random_matrix(rng, n, d);
    const Metric metric = s % 2 ? Metric::cosine : Metric::euclidean;
    const auto a = kmeans(pts, k, metric, s), b = kmeans(pts, k, metric, s);
    CHECK(a.labels == b.labels);
    CHECK(std::memcmp(a.centroids.data(), b.centroids.data(), sizeof(double) * a.centroids.size()) == 0);
    for (std::size_t i = 1; i < a.sse.size(); ++i) CHECK(a.sse[i] <= a.sse[i - 1] * (1 + 1e-12) + 1e-12);
  }
}

TEST_CASE("cosine distance is twice one minus the cosine") {
  Vector a(2), b(2);
  a << 3, 0;
  b << 1, 1;
  CHECK(metric_distance(a, b, Metric::cosine) == doctest::Approx(2 * (1 - std::sqrt(0.5))));
  CHECK(metric_distance(a, b, Metric::euclidean) == doctest::Approx(5.0));
}

TEST_CASE("cluster_image assigns to the nearest centroid with low-id ties") {
  std::mt19937_64 rng(2);
  Codebook cb;
  cb.metric = Metric::euclidean;
  cb.centroids = testing::random_matrix(rng, 7, 4);

  auto constant = feature_map(cb.centroids.row(3).replicate(6, 1), 2, 3);
  CHECK(cluster_image(constant, cb) == IdGrid(2, 3, 3));

  // Equidistant from centroids 2 and 5.
  const Vector mid = 0.5 * (cb.centroids.row(2) + cb.centroids.row(5)).transpose();
  Codebook tie = cb;
  for (int k : {0, 1, 3, 4, 6}) tie.centroids.row(k) = (mid + 100.0 * Vector::Ones(4)).transpose();
  CHECK(cluster_image(feature_map(mid.transpose(), 1, 1), tie).cells[0] == 2);

  const auto random = feature_map(testing::random_matrix(rng, 20, 4), 4, 5);
  const auto ids = cluster_image(random, cb);
  for (int i = 0; i < 20; ++i) CHECK(ids.cells[static_cast<std::size_t>(i)] == nearest(random.features.row(i).transpose(), cb));
}

TEST_CASE("codebooks fitted twice with one seed are identical") {
  std::vector<PatchFeatureMap> corpus;
  std::mt19937_64 rng(3);
  for (int i = 0; i < 3; ++i) corpus.push_back(feature_map(testing::random_matrix(rng, 12, 5), 3, 4));
  const auto a = fit_codebook(corpus, 6, Metric::cosine, 11);
  const auto b = fit_codebook(corpus, 6, Metric::cosine, 11);
  CHECK(a.centroids == b.centroids);
  CHECK(a.size() == 6);
  for (int k = 0; k < 6; ++k) CHECK(a.centroids.row(k).norm() == doctest::Approx(1.0));
  CHECK_THROWS_AS(fit_codebook(corpus, 1, Metric::cosine, 0), ConfigError);
  CHECK_THROWS_AS(fit_codebook(corpus, 40, Metric::cosine, 0), PreconditionError);
}

TEST_CASE("constant features upsample to the replicated low-res grid") {
  Codebook cb;
  cb.metric = Metric::euclidean;
  cb.centroids = Matrix::Identity(3, 3);
  const auto fm = feature_map(cb.centroids.row(1).replicate(6, 1), 2, 3);
  const auto low = cluster_image(fm, cb);
  for (auto mode : {UpsampleMode::bilinear, UpsampleMode::replicate}) {
    const auto masks = upsample_masks(fm, low, cb, {32, 48}, mode);
    CHECK(masks.high_res == IdGrid(32, 48, 1));
    CHECK(is_partition(masks));
  }
}

TEST_CASE("a vertical feature step puts the boundary at the interpolated midpoint") {
  Codebook cb;
  cb.metric = Metric::euclidean;
  cb.centroids = Matrix::Identity(2, 2);
  Matrix f(8, 2);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 4; ++x) f.row(y * 4 + x) = cb.centroids.row(x < 2 ? 0 : 1);
  const auto fm = feature_map(f, 2, 4);
  const auto masks = upsample_masks(fm, cluster_image(fm, cb), cb, {32, 64}, UpsampleMode::bilinear);
  REQUIRE(is_partition(masks));
  // Patch centers sit at 8, 24, 40, 56; the features cross halfway between 24 and 40.
  for (int y = 0; y < 32; ++y) {
    int first_right = 64;
    for (int x = 0; x < 64; ++x)
      if (masks.high_res.at(y, x) == 1) {
        first_right = x;
        break;
      }
    CHECK(std::abs(first_right - 32) <= 1);
    for (int x = first_right; x < 64; ++x) CHECK(masks.high_res.at(y, x) == 1);
  }
}

TEST_CASE("upsampled masks are partitions on random inputs") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    std::mt19937_64 rng(s);
    const int gh = testing::uniform_int(rng, 1, 4), gw = testing::uniform_int(rng, 1, 4);
    Codebook cb;
    cb.metric = s % 2 ? Metric::cosine : Metric::euclidean;
    cb.centroids = testing::random_matrix(rng, 5, 3);
    if (cb.metric == Metric::cosine) cb.centroids.rowwise().normalize();
    const auto fm = feature_map(testing::random_matrix(rng, gh * gw, 3), gh, gw, 8);
    const auto low = cluster_image(fm, cb);
    for (auto mode : {UpsampleMode::bilinear, UpsampleMode::replicate}) {
      const auto masks = upsample_masks(fm, low, cb, {gh * 8, gw * 8}, mode);
      CHECK(is_partition(masks));
    }
  }
}

TEST_CASE("partition check catches overlaps, gaps and stray ids") {
  auto masks = testing::masks_from_low_res(IdGrid(2, 2, 1), 4, 3);
  CHECK(is_partition(masks));
  auto bad = masks;
  bad.high_res.at(0, 0) = 2;  // id absent from low_res
  CHECK_FALSE(is_partition(bad));
  bad = masks;
  bad.high_res.at(0, 0) = -1;
  CHECK_FALSE(is_partition(bad));
  bad = masks;
  bad.low_res.at(0, 0) = 3;  // outside [0, num_ids)
  CHECK_FALSE(is_partition(bad));
  bad = masks;
  bad.high_res.cells.pop_back();  // pixel counts no longer sum to H*W
  CHECK_FALSE(is_partition(bad));
}

TEST_CASE("majority downsampling and agreement") {
  IdGrid high(4, 4, 0);
  high.at(0, 2) = 1;
  high.at(0, 3) = 1;
  high.at(1, 3) = 1;
  const auto low = majority_downsample(high, 2, 2);
  CHECK(low.at(0, 0) == 0);
  CHECK(low.at(0, 1) == 1);
  RegionMaskSet m{low, high, distinct_ids(low), 2, true};
  CHECK(downsample_agreement(m) == 1.0);
  IdGrid even(2, 2, 0);
  even.at(0, 1) = 1;
  even.at(1, 0) = 1;
  CHECK(majority_downsample(even, 1, 1).cells[0] == 0);  // 2-2 tie goes to the lower id
}

TEST_CASE("per-image clustering degrades gracefully and recovers separated blobs") {
  auto uniform = feature_map(Matrix::Ones(9, 4), 3, 3);
  const auto single = per_image_kmeans(uniform, 27, 0);
  CHECK(single.effective_k == 1);
  CHECK(single.low_res == IdGrid(3, 3, 0));
  CHECK_FALSE(single.warnings.empty());

  std::mt19937_64 rng(4);
  Matrix blobs(10, 2);
  for (int i = 0; i < 10; ++i) {
    const double cx = (i % 3 == 0) ? 20.0 : -20.0;
    blobs(i, 0) = cx + 0.1 * testing::random_matrix(rng, 1, 1)(0, 0);
    blobs(i, 1) = 0.1 * testing::random_matrix(rng, 1, 1)(0, 0);
  }
  const auto oracle = testing::brute_two_partition(blobs);
  const auto r = per_image_kmeans(feature_map(blobs, 2, 5), 2, 9, Metric::euclidean);
  for (int i = 0; i < 10; ++i)
    CHECK((r.low_res.cells[static_cast<std::size_t>(i)] == r.low_res.cells[0]) == (oracle[static_cast<std::size_t>(i)] == 0));
  CHECK(r.low_res.cells[1] == 0);  // the larger blob ranks first
  CHECK(per_image_kmeans(feature_map(blobs, 2, 5), 2, 9, Metric::euclidean).low_res == r.low_res);
}
