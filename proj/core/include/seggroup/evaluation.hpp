// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seggroup/encoder.hpp"
#include "seggroup/recognition.hpp"
#include "seggroup/region_masks.hpp"

namespace seggroup {

/// Confusion counts: entry (g, p) = pixels with ground truth g predicted as p.
class ConfusionAccumulator {
 public:
  explicit ConfusionAccumulator(int num_classes, int ignore_id = kIgnoreLabel);

  /// Adds every pixel whose ground truth is not ignore. Throws on shape mismatch or out-of-range ids.
  void accumulate(const IdGrid& pred, const IdGrid& gt);
  void merge(const ConfusionAccumulator& other);

  int num_classes() const { return num_classes_; }
  int ignore_id() const { return ignore_id_; }
  std::int64_t total() const;
  std::int64_t at(int gt, int pred) const { return matrix_[static_cast<std::size_t>(gt) * num_classes_ + pred]; }
  const std::vector<std::int64_t>& matrix() const { return matrix_; }
  std::int64_t images() const { return images_; }

  friend bool operator==(const ConfusionAccumulator&, const ConfusionAccumulator&) = default;

 private:
  int num_classes_;
  int ignore_id_;
  std::vector<std::int64_t> matrix_;
  std::int64_t images_ = 0;
};

struct MiouResult {
  std::vector<std::optional<double>> per_class_iou;  // nullopt when absent from both gt and pred
  double miou = 0;                                   // percent, over classes with a nonzero denominator
  double pixel_accuracy = 0;                         // percent
};

/// Throws PreconditionError for an empty accumulator.
MiouResult miou(const ConfusionAccumulator& acc);

nlohmann::json miou_report(const MiouResult& result, std::int64_t num_images);

struct UpperBoundOptions {
  int ignore_id = kIgnoreLabel;
  /// Label for regions whose pixels are all ignore; unset leaves them out (predicted as ignore).
  std::optional<int> background_id;
};

/// Gives each region its majority ground-truth label (ignore excluded, ties toward the lowest label).
IdGrid upper_bound_labels(const IdGrid& regions, const IdGrid& gt, const UpperBoundOptions& options = {});

/// Per-image upper bound: mIoU of the majority labeling against gt.
double upper_bound(const RegionMaskSet& masks, const IdGrid& gt, int num_classes,
                   const UpperBoundOptions& options = {});

struct StrategyTiming {
  MaskingStrategy strategy;
  double median_ms = 0;
  std::vector<double> samples_ms;
  int passes = 0;
  double fidelity_cosine = 0;  // mean cosine to context_aware embeddings
};

struct BenchmarkOptions {
  int warmup = 3;
  int repeats = 20;
};

/// Times encode_regions per strategy (warmup excluded, monotonic clock, median reported).
std::vector<StrategyTiming> benchmark_masking(const VisionEncoder& encoder, const Image& image,
                                              const RegionMaskSet& masks, std::span<const MaskingStrategy> strategies,
                                              const BenchmarkOptions& options = {});

nlohmann::json benchmark_report(const std::vector<StrategyTiming>& timings, int num_regions);

}  // namespace seggroup
