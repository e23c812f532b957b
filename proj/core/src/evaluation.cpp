// SPDX-License-Identifier: Apache-2.0
#include "seggroup/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <map>

namespace seggroup {

ConfusionAccumulator::ConfusionAccumulator(int num_classes, int ignore_id)
    : num_classes_(num_classes), ignore_id_(ignore_id) {
  if (num_classes < 1) throw PreconditionError("accumulator needs at least one class");
  if (ignore_id >= 0 && ignore_id < num_classes) throw PreconditionError("ignore id collides with a class id");
  matrix_.assign(static_cast<std::size_t>(num_classes) * num_classes, 0);
}

void ConfusionAccumulator::accumulate(const IdGrid& pred, const IdGrid& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw PreconditionError("prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                            " and ground truth " + std::to_string(gt.height) + "x" + std::to_string(gt.width) +
                            " differ in shape");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int g = gt.cells[i];
    if (g == ignore_id_) continue;
    const int p = pred.cells[i];
    if (g < 0 || g >= num_classes_) throw PreconditionError("ground-truth id " + std::to_string(g) + " out of range");
    if (p < 0 || p >= num_classes_)
      throw PreconditionError("predicted id " + std::to_string(p) + " out of range at a labeled pixel");
    ++matrix_[static_cast<std::size_t>(g) * num_classes_ + p];
  }
  ++images_;
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
  if (other.num_classes_ != num_classes_ || other.ignore_id_ != ignore_id_)
    throw PreconditionError("cannot merge accumulators with different class sets");
  for (std::size_t i = 0; i < matrix_.size(); ++i) matrix_[i] += other.matrix_[i];
  images_ += other.images_;
}

std::int64_t ConfusionAccumulator::total() const {
  std::int64_t t = 0;
  for (auto v : matrix_) t += v;
  return t;
}

MiouResult miou(const ConfusionAccumulator& acc) {
  if (acc.total() == 0) throw PreconditionError("cannot compute mIoU of an empty accumulator");
  const int n = acc.num_classes();
  MiouResult out;
  double sum = 0;
  int counted = 0;
  std::int64_t correct = 0;
  for (int c = 0; c < n; ++c) {
    std::int64_t gt_total = 0, pred_total = 0;
    for (int k = 0; k < n; ++k) {
      gt_total += acc.at(c, k);
      pred_total += acc.at(k, c);
    }
    const std::int64_t tp = acc.at(c, c);
    correct += tp;
    const std::int64_t denom = gt_total + pred_total - tp;  // TP + FP + FN
    if (denom == 0) {
      out.per_class_iou.push_back(std::nullopt);
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    out.per_class_iou.push_back(iou);
    sum += iou;
    ++counted;
  }
  out.miou = 100.0 * sum / counted;
  out.pixel_accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(acc.total());
  return out;
}

nlohmann::json miou_report(const MiouResult& result, std::int64_t num_images) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& v : result.per_class_iou) per_class.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  return {{"per_class_iou", per_class},
          {"miou", result.miou},
          {"pixel_acc", result.pixel_accuracy},
          {"num_images", num_images}};
}

IdGrid upper_bound_labels(const IdGrid& regions, const IdGrid& gt, const UpperBoundOptions& options) {
  if (regions.height != gt.height || regions.width != gt.width)
    throw PreconditionError("region masks and ground truth differ in shape");
  std::map<int, std::map<int, std::int64_t>> votes;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    auto& region_votes = votes[regions.cells[i]];
    if (gt.cells[i] != options.ignore_id) ++region_votes[gt.cells[i]];
  }
  std::map<int, int> assigned;
  for (const auto& [region, counts] : votes) {
    if (counts.empty()) {
      assigned[region] = options.background_id.value_or(options.ignore_id);
      continue;
    }
    int best = counts.begin()->first;
    std::int64_t best_n = counts.begin()->second;
    for (const auto& [label, n] : counts)
      if (n > best_n) best = label, best_n = n;
    assigned[region] = best;
  }
  IdGrid out(gt.height, gt.width);
  for (std::size_t i = 0; i < gt.size(); ++i) out.cells[i] = assigned[regions.cells[i]];
  return out;
}

double upper_bound(const RegionMaskSet& masks, const IdGrid& gt, int num_classes, const UpperBoundOptions& options) {
  const auto labels = upper_bound_labels(masks.high_res, gt, options);
  ConfusionAccumulator acc(num_classes, options.ignore_id);
  acc.accumulate(labels, gt);
  return miou(acc).miou;
}

std::vector<StrategyTiming> benchmark_masking(const VisionEncoder& encoder, const Image& image,
                                              const RegionMaskSet& masks, std::span<const MaskingStrategy> strategies,
                                              const BenchmarkOptions& options) {
  using clock = std::chrono::steady_clock;
  if (options.warmup < 0 || options.repeats < 1) throw ConfigError("benchmark needs warmup >= 0 and repeats >= 1");
  const auto reference = encoder.encode_regions(image, masks, MaskingStrategy::context_aware, nullptr);

  std::vector<StrategyTiming> out;
  for (auto strategy : strategies) {
    StrategyTiming t;
    t.strategy = strategy;
    RegionEncoding last;
    for (int i = 0; i < options.warmup; ++i) last = encoder.encode_regions(image, masks, strategy, nullptr);
    for (int i = 0; i < options.repeats; ++i) {
      const auto start = clock::now();
      last = encoder.encode_regions(image, masks, strategy, nullptr);
      const auto stop = clock::now();
      t.samples_ms.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
    }
    auto sorted = t.samples_ms;
    std::sort(sorted.begin(), sorted.end());
    const auto n = sorted.size();
    t.median_ms = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    t.passes = last.patch_passes;
    double cos_sum = 0;
    for (std::size_t k = 0; k < last.embeddings.size(); ++k)
      cos_sum += last.embeddings[k].vector.dot(reference.embeddings[k].vector);
    t.fidelity_cosine = last.embeddings.empty() ? 0.0 : cos_sum / static_cast<double>(last.embeddings.size());
    out.push_back(std::move(t));
  }
  return out;
}

nlohmann::json benchmark_report(const std::vector<StrategyTiming>& timings, int num_regions) {
  nlohmann::json strategies = nlohmann::json::object();
  for (const auto& t : timings) {
    strategies[strategy_name(t.strategy)] = {
        {"median_ms", t.median_ms}, {"passes", t.passes}, {"fidelity_cosine", t.fidelity_cosine}};
  }
  return {{"num_regions", num_regions}, {"strategies", strategies}};
}

}  // namespace seggroup
