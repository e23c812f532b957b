// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seggroup/encoder.hpp"
#include "seggroup/region_masks.hpp"

namespace seggroup {

enum class Metric { cosine, euclidean };

std::string metric_name(Metric m);
Metric parse_metric(std::string_view name);

struct Codebook {
  Matrix centroids;  // (M, D); unit rows under the cosine metric
  Metric metric = Metric::cosine;
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(centroids.rows()); }
  int dim() const { return static_cast<int>(centroids.cols()); }
  void validate() const;
};

void save_codebook(const std::filesystem::path& path, const Codebook& codebook);
Codebook load_codebook(const std::filesystem::path& path);

struct KMeansOptions {
  int max_iterations = 300;
  double tolerance = 1e-6;  // stop once no centroid moves farther than this
};

struct KMeansResult {
  Matrix centroids;
  std::vector<int> labels;
  std::vector<double> sse;  // within-cluster sum of squared distances, one entry per assignment step
  int iterations = 0;
  bool converged = false;
};

/// Squared distance under the metric. Cosine compares unit vectors: |a/|a| - b/|b||^2 = 2 (1 - cos).
double metric_distance(const Vector& a, const Vector& b, Metric metric);

/// Lloyd's algorithm with k-means++ seeding. Points are unit-normalized first under the cosine metric.
KMeansResult kmeans(const Matrix& points, int k, Metric metric, std::uint64_t seed, const KMeansOptions& options = {});

/// Number of distinct rows (after normalization under the cosine metric).
int count_distinct_rows(const Matrix& points, Metric metric);

/// Corpus-level codebook so region ids agree across images.
Codebook fit_codebook(std::span<const PatchFeatureMap> corpus, int num_regions, Metric metric, std::uint64_t seed,
                      const KMeansOptions& options = {}, KMeansResult* trace = nullptr);

/// Nearest centroid per patch; ties go to the lowest id.
IdGrid cluster_image(const PatchFeatureMap& features, const Codebook& codebook);

enum class UpsampleMode { bilinear, replicate };

UpsampleMode parse_upsample_mode(std::string_view name);

/// Builds the pixel-level masks. Bilinear mode interpolates features to pixels and assigns each
/// pixel to the nearest centroid among the ids present in `low_res`.
RegionMaskSet upsample_masks(const PatchFeatureMap& features, const IdGrid& low_res, const Codebook& codebook,
                             Size2 image_size, UpsampleMode mode = UpsampleMode::bilinear);

struct PerImageClustering {
  IdGrid low_res;
  Codebook centroids;  // rank-ordered: id 0 is the largest cluster
  int effective_k = 0;
  std::vector<std::string> warnings;
};

/// Per-image clustering without cross-image id consistency; ids rank clusters by size.
PerImageClustering per_image_kmeans(const PatchFeatureMap& features, int num_regions, std::uint64_t seed,
                                    Metric metric = Metric::cosine);

}  // namespace seggroup
