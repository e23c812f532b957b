// SPDX-License-Identifier: Apache-2.0
#include "seggroup/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "seggroup/tensor_io.hpp"

namespace seggroup {

namespace {

Matrix normalized_rows(const Matrix& points) {
  Matrix out = points;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double n = out.row(r).norm();
    if (n > 0) out.row(r) /= n;
  }
  return out;
}

Matrix prepare_points(const Matrix& points, Metric metric) {
  return metric == Metric::cosine ? normalized_rows(points) : points;
}

// Index of the nearest centroid; ties keep the lowest index.
int nearest(const Eigen::Ref<const RowVector>& x, const Matrix& centroids, double* dist = nullptr) {
  int best = 0;
  double best_d = 0;
  for (Eigen::Index k = 0; k < centroids.rows(); ++k) {
    const double d = (x - centroids.row(k)).squaredNorm();
    if (k == 0 || d < best_d) {
      best = static_cast<int>(k);
      best_d = d;
    }
  }
  if (dist) *dist = best_d;
  return best;
}

Matrix flatten(std::span<const PatchFeatureMap> corpus) {
  Eigen::Index rows = 0;
  const auto dim = corpus.empty() ? 0 : corpus.front().features.cols();
  for (const auto& m : corpus) {
    if (m.features.cols() != dim) throw PreconditionError("feature maps in the corpus differ in dimension");
    rows += m.features.rows();
  }
  Matrix all(rows, dim);
  Eigen::Index at = 0;
  for (const auto& m : corpus) {
    all.middleRows(at, m.features.rows()) = m.features;
    at += m.features.rows();
  }
  return all;
}

// k-means++: first center uniform, the rest with probability proportional to squared distance.
Matrix seed_centroids(const Matrix& points, int k, std::mt19937_64& rng) {
  const auto n = points.rows();
  Matrix centroids(k, points.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centroids.row(0) = points.row(pick(rng));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[i] = (points.row(i) - centroids.row(0)).squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Eigen::Index chosen = 0;
    if (total > 0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2[i];
        if (target < 0 && d2[i] > 0) {
          chosen = i;
          break;
        }
      }
      while (d2[chosen] == 0 && chosen > 0) --chosen;
    }
    centroids.row(c) = points.row(chosen);
    for (Eigen::Index i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], (points.row(i) - centroids.row(c)).squaredNorm());
  }
  return centroids;
}

}  // namespace

std::string metric_name(Metric m) { return m == Metric::cosine ? "cosine" : "euclidean"; }

Metric parse_metric(std::string_view name) {
  if (name == "cosine") return Metric::cosine;
  if (name == "euclidean") return Metric::euclidean;
  throw ConfigError("unknown metric '" + std::string(name) + "'");
}

UpsampleMode parse_upsample_mode(std::string_view name) {
  if (name == "bilinear") return UpsampleMode::bilinear;
  if (name == "replicate") return UpsampleMode::replicate;
  throw ConfigError("unknown upsample mode '" + std::string(name) + "'");
}

void Codebook::validate() const {
  if (centroids.rows() < 2) throw FormatError("codebook needs M >= 2");
  if (!centroids.allFinite()) throw FormatError("codebook contains non-finite centroids");
  if (metric == Metric::cosine) {
    for (Eigen::Index k = 0; k < centroids.rows(); ++k)
      if (std::abs(centroids.row(k).norm() - 1.0) > 1e-9)
        throw FormatError("cosine codebook centroid " + std::to_string(k) + " is not unit norm");
  }
}

void save_codebook(const std::filesystem::path& path, const Codebook& codebook) {
  TensorFile file;
  file.metadata = {{"format", "seggroup.codebook"},
                   {"M", codebook.size()},
                   {"metric", metric_name(codebook.metric)},
                   {"seed", codebook.seed}};
  file.put_matrix("centroids", codebook.centroids);
  file.save(path);
}

Codebook load_codebook(const std::filesystem::path& path) {
  const auto file = TensorFile::load(path);
  Codebook cb;
  try {
    cb.metric = parse_metric(file.metadata.at("metric").get<std::string>());
    cb.seed = file.metadata.at("seed").get<std::uint64_t>();
    cb.centroids = file.get_matrix("centroids");
    if (file.metadata.at("M").get<int>() != cb.size()) throw FormatError("codebook M does not match centroids");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("codebook metadata: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  cb.validate();
  return cb;
}

double metric_distance(const Vector& a, const Vector& b, Metric metric) {
  if (metric == Metric::euclidean) return (a - b).squaredNorm();
  const double na = a.norm(), nb = b.norm();
  return ((na > 0 ? Vector(a / na) : a) - (nb > 0 ? Vector(b / nb) : b)).squaredNorm();
}

int count_distinct_rows(const Matrix& points, Metric metric) {
  const Matrix p = prepare_points(points, metric);
  std::vector<std::vector<double>> rows;
  rows.reserve(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index r = 0; r < p.rows(); ++r) rows.emplace_back(p.row(r).data(), p.row(r).data() + p.cols());
  std::sort(rows.begin(), rows.end());
  return static_cast<int>(std::unique(rows.begin(), rows.end()) - rows.begin());
}

KMeansResult kmeans(const Matrix& raw_points, int k, Metric metric, std::uint64_t seed, const KMeansOptions& options) {
  if (k < 1) throw PreconditionError("k must be >= 1");
  if (raw_points.rows() < k) throw PreconditionError("fewer points than clusters");
  if (!raw_points.allFinite()) throw PreconditionError("k-means input contains non-finite values");
  const Matrix points = prepare_points(raw_points, metric);
  const auto n = points.rows();

  std::mt19937_64 rng(seed);
  KMeansResult result;
  result.centroids = seed_centroids(points, k, rng);
  result.labels.assign(static_cast<std::size_t>(n), 0);

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    double sse = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double d = 0;
      result.labels[i] = nearest(points.row(i), result.centroids, &d);
      sse += d;
    }
    result.sse.push_back(sse);
    result.iterations = iter + 1;

    Matrix sums = Matrix::Zero(k, points.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(result.labels[i]) += points.row(i);
      ++counts[result.labels[i]];
    }
    double shift = 0;
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centroid
      RowVector updated = sums.row(c) / counts[c];
      if (metric == Metric::cosine) {
        const double norm = updated.norm();
        if (norm > 0) updated /= norm;
      }
      shift = std::max(shift, (updated - result.centroids.row(c)).norm());
      result.centroids.row(c) = updated;
    }
    if (shift < options.tolerance) {
      result.converged = true;
      break;
    }
  }
  // Final labels agree with the final centroids.
  for (Eigen::Index i = 0; i < n; ++i) result.labels[i] = nearest(points.row(i), result.centroids);
  return result;
}

Codebook fit_codebook(std::span<const PatchFeatureMap> corpus, int num_regions, Metric metric, std::uint64_t seed,
                      const KMeansOptions& options, KMeansResult* trace) {
  if (num_regions < 2) throw ConfigError("codebook needs M >= 2");
  if (corpus.empty()) throw PreconditionError("empty feature corpus");
  const Matrix points = flatten(corpus);
  const int distinct = count_distinct_rows(points, metric);
  if (distinct < num_regions)
    throw PreconditionError("corpus has " + std::to_string(distinct) + " distinct patch vectors, fewer than M = " +
                            std::to_string(num_regions));
  auto result = kmeans(points, num_regions, metric, seed, options);
  Codebook cb{result.centroids, metric, seed};
  if (trace) *trace = std::move(result);
  return cb;
}

IdGrid cluster_image(const PatchFeatureMap& features, const Codebook& codebook) {
  if (features.dim() != codebook.dim())
    throw PreconditionError("feature dimension " + std::to_string(features.dim()) +
                            " does not match codebook dimension " + std::to_string(codebook.dim()));
  const Matrix points = prepare_points(features.features, codebook.metric);
  IdGrid grid(features.grid_height, features.grid_width);
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    grid.cells[i] = nearest(points.row(i), codebook.centroids);
  return grid;
}

RegionMaskSet upsample_masks(const PatchFeatureMap& features, const IdGrid& low_res, const Codebook& codebook,
                             Size2 image_size, UpsampleMode mode) {
  const int gh = features.grid_height, gw = features.grid_width;
  if (low_res.height != gh || low_res.width != gw) throw PreconditionError("low_res does not match the feature grid");
  if (image_size.height <= 0 || image_size.width <= 0 || image_size.height % gh != 0 ||
      image_size.width % gw != 0 || image_size.height / gh != image_size.width / gw)
    throw PreconditionError("image size is not a patch multiple of the feature grid");
  if (features.dim() != codebook.dim()) throw PreconditionError("feature dimension does not match codebook");

  RegionMaskSet masks;
  masks.low_res = low_res;
  masks.present_ids = distinct_ids(low_res);
  masks.num_ids = codebook.size();
  masks.high_res = IdGrid(image_size.height, image_size.width);
  const int p = image_size.height / gh;

  if (mode == UpsampleMode::replicate) {
    for (int y = 0; y < image_size.height; ++y)
      for (int x = 0; x < image_size.width; ++x) masks.high_res.at(y, x) = low_res.at(y / p, x / p);
    return masks;
  }

  // Candidates restricted to ids present on the patch grid, in ascending id order.
  Matrix candidates(static_cast<Eigen::Index>(masks.present_ids.size()), codebook.dim());
  for (std::size_t i = 0; i < masks.present_ids.size(); ++i)
    candidates.row(static_cast<Eigen::Index>(i)) = codebook.centroids.row(masks.present_ids[i]);

  const Matrix& f = features.features;
  RowVector pixel(codebook.dim());
  for (int y = 0; y < image_size.height; ++y) {
    const double fy = std::clamp((y + 0.5) / p - 0.5, 0.0, gh - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, gh - 1);
    const double wy = fy - y0;
    for (int x = 0; x < image_size.width; ++x) {
      const double fx = std::clamp((x + 0.5) / p - 0.5, 0.0, gw - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, gw - 1);
      const double wx = fx - x0;
      pixel = (1 - wy) * ((1 - wx) * f.row(y0 * gw + x0) + wx * f.row(y0 * gw + x1)) +
              wy * ((1 - wx) * f.row(y1 * gw + x0) + wx * f.row(y1 * gw + x1));
      if (codebook.metric == Metric::cosine) {
        const double n = pixel.norm();
        if (n > 0) pixel /= n;
      }
      masks.high_res.at(y, x) = masks.present_ids[nearest(pixel, candidates)];
    }
  }
  return masks;
}

PerImageClustering per_image_kmeans(const PatchFeatureMap& features, int num_regions, std::uint64_t seed,
                                    Metric metric) {
  if (num_regions < 1) throw ConfigError("number of regions must be >= 1");
  PerImageClustering out;
  const int distinct = count_distinct_rows(features.features, metric);
  int k = num_regions;
  if (distinct < k) {
    out.warnings.push_back("only " + std::to_string(distinct) + " distinct patch vectors; reducing K from " +
                           std::to_string(k) + " to " + std::to_string(distinct));
    spdlog::warn("{}", out.warnings.back());
    k = distinct;
  }
  const auto result = kmeans(features.features, k, metric, seed);

  // Rank clusters by size (largest first); ties by first occurrence in raster order.
  std::vector<int> counts(static_cast<std::size_t>(k), 0), first(static_cast<std::size_t>(k), -1);
  for (std::size_t i = 0; i < result.labels.size(); ++i) {
    const int l = result.labels[i];
    ++counts[l];
    if (first[l] < 0) first[l] = static_cast<int>(i);
  }
  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (counts[a] != counts[b]) return counts[a] > counts[b];
    if ((first[a] < 0) != (first[b] < 0)) return first[a] >= 0;
    return first[a] < first[b];
  });
  std::vector<int> rank(static_cast<std::size_t>(k));
  for (int r = 0; r < k; ++r) rank[order[r]] = r;

  out.low_res = IdGrid(features.grid_height, features.grid_width);
  for (std::size_t i = 0; i < result.labels.size(); ++i) out.low_res.cells[i] = rank[result.labels[i]];
  out.centroids.metric = metric;
  out.centroids.seed = seed;
  out.centroids.centroids = Matrix(k, features.dim());
  for (int r = 0; r < k; ++r) out.centroids.centroids.row(r) = result.centroids.row(order[r]);
  out.effective_k = k;
  return out;
}

}  // namespace seggroup
