// SPDX-License-Identifier: Apache-2.0
#include "seggroup/commands.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

#include <spdlog/spdlog.h>

#include "seggroup/error.hpp"
#include "seggroup/png_io.hpp"
#include "seggroup/tensor_io.hpp"

namespace seggroup {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct InputImage {
  std::string stem;
  fs::path path;
};

std::vector<InputImage> list_images(const RunConfig& config) {
  if (!config.paths.images_dir) throw ConfigError("paths.images_dir is required for this command");
  std::vector<InputImage> out;
  for (const auto& entry : fs::directory_iterator(*config.paths.images_dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
    out.push_back({entry.path().stem().string(), entry.path()});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.stem < b.stem; });
  if (out.empty()) throw DataError("no .png images in " + config.paths.images_dir->string());
  return out;
}

Image load_image(const fs::path& path) { return image_from_raster(read_png_rgb(path)); }

std::optional<PatchFeatureMap> load_features(const RunConfig& config, const std::string& stem) {
  if (!config.paths.features_dir) return std::nullopt;
  const auto path = *config.paths.features_dir / (stem + ".tensors");
  if (!fs::exists(path)) throw DataError("missing external features: " + path.string());
  return load_external_features(path);
}

/// Running record of per-image outcomes.
class Manifest {
 public:
  Manifest(std::string command, const RunConfig& config) : command_(std::move(command)), hash_(config.hash()) {}

  json& ok(const std::string& image) {
    entries_.push_back({{"image", image}, {"status", "ok"}});
    ++ok_;
    return entries_.back();
  }
  void error(const std::string& image, const std::string& message) {
    spdlog::error("{}: {}", image, message);
    entries_.push_back({{"image", image}, {"status", "error"}, {"error", message}});
  }
  int succeeded() const { return ok_; }
  bool all_failed() const { return ok_ == 0 && !entries_.empty(); }
  json document(const json& summary) const {
    return {{"command", command_}, {"config_hash", hash_}, {"summary", summary}, {"inputs", entries_}};
  }

 private:
  std::string command_;
  std::string hash_;
  std::vector<json> entries_;
  int ok_ = 0;
};

void write_run_files(const RunConfig& config, const Manifest& manifest, const json& summary) {
  const auto& out = config.paths.out_dir;
  write_text_atomic(out / "config.json",
                    json{{"config_hash", config.hash()}, {"config", config.resolved}}.dump(2) + "\n");
  write_text_atomic(out / "manifest.json", manifest.document(summary).dump(2) + "\n");
}

/// Writes the run files and throws when nothing usable is left.
void require_any(const RunConfig& config, const Manifest& manifest, bool any_usable) {
  if (any_usable) return;
  write_run_files(config, manifest, json{{"images", 0}});
  throw DataError("every input failed; see manifest.json");
}

CategorySet load_categories(const RunConfig& config, bool required) {
  CategorySet set;
  std::vector<std::string> file_templates;
  if (config.recognition.category_file) {
    auto file = load_category_file(*config.recognition.category_file);
    set.names = std::move(file.names);
    file_templates = std::move(file.templates);
  } else if (required) {
    throw ConfigError("recognition.category_file is required for this command");
  }
  if (config.recognition.templates_file)
    set.templates = load_word_list(*config.recognition.templates_file);
  else if (!file_templates.empty())
    set.templates = file_templates;
  else
    set.templates = default_templates();
  if (config.recognition.background_pool_file)
    set.background_pool = load_word_list(*config.recognition.background_pool_file);
  return set;
}

/// Loads paths.codebook or fits one on `features`.
Codebook obtain_codebook(const RunConfig& config, std::span<const PatchFeatureMap> features, json& summary) {
  if (config.paths.codebook) {
    auto cb = load_codebook(*config.paths.codebook);
    if (cb.size() != config.grouping.num_regions)
      throw ConfigError("codebook has " + std::to_string(cb.size()) + " centroids but grouping.M is " +
                        std::to_string(config.grouping.num_regions));
    if (cb.metric != config.grouping.metric)
      throw ConfigError("codebook metric '" + metric_name(cb.metric) + "' differs from grouping.metric");
    summary["codebook"] = {{"source", config.paths.codebook->string()}};
    return cb;
  }
  KMeansResult trace;
  auto cb = fit_codebook(features, config.grouping.num_regions, config.grouping.metric, config.grouping.seed, {},
                         &trace);
  summary["codebook"] = {{"source", "fitted"},
                         {"iterations", trace.iterations},
                         {"converged", trace.converged},
                         {"final_sse", trace.sse.empty() ? 0.0 : trace.sse.back()}};
  return cb;
}

struct LoadedImage {
  InputImage input;
  Image image;
  std::optional<PatchFeatureMap> external;
  PatchFeatureMap features;  // grouping features of the prepared image
};

/// Loads every input and computes grouping features; failures go to the manifest.
std::vector<LoadedImage> load_inputs(const RunConfig& config, const VisionEncoder& vision, Manifest& manifest,
                                     std::vector<std::string>* failed) {
  std::vector<LoadedImage> out;
  for (const auto& input : list_images(config)) {
    try {
      LoadedImage li{input, load_image(input.path), load_features(config, input.stem), {}};
      if (li.external) {
        li.features = *li.external;
      } else {
        li.features = patch_features(vision, prepare_image(li.image, config.preprocessing).image);
      }
      out.push_back(std::move(li));
    } catch (const DataError& e) {
      manifest.error(input.path.filename().string(), e.what());
      if (failed) failed->push_back(input.stem);
    }
  }
  return out;
}

std::vector<PatchFeatureMap> feature_list(const std::vector<LoadedImage>& images) {
  std::vector<PatchFeatureMap> out;
  for (const auto& li : images) out.push_back(li.features);
  return out;
}

json omitted_json(const std::vector<int>& omitted) { return omitted; }

struct Segmenter {
  const RunConfig& config;
  const Encoders& encoders;
  std::optional<Codebook> codebook;
  std::optional<RegionTokenBank> bank;
  Recognizer recognizer;

  SegmentedImage operator()(const LoadedImage& li) const {
    return segment_image(encoders.vision, li.image, config.preprocessing, config.grouping,
                         codebook ? &*codebook : nullptr, recognizer, config.recognition.strategy,
                         bank ? &*bank : nullptr, li.external ? &*li.external : nullptr);
  }
};

Segmenter make_segmenter(const RunConfig& config, const Encoders& encoders, const std::vector<LoadedImage>& images,
                         json& summary) {
  Segmenter s{config, encoders, std::nullopt, std::nullopt, build_recognizer(load_categories(config, true), encoders.text)};
  if (!config.grouping.per_image) {
    const auto features = feature_list(images);
    s.codebook = obtain_codebook(config, features, summary);
  }
  if (config.paths.token_bank) {
    if (config.grouping.per_image) throw ConfigError("paths.token_bank needs grouping.mode 'codebook'");
    auto [bank, step] = load_token_bank(*config.paths.token_bank);
    if (bank.size() != s.codebook->size())
      throw ConfigError("token bank has " + std::to_string(bank.size()) + " tokens but the codebook has " +
                        std::to_string(s.codebook->size()));
    summary["token_bank"] = {{"source", config.paths.token_bank->string()}, {"step", step}};
    s.bank = std::move(bank);
  }
  return s;
}

IdGrid load_gt(const RunConfig& config, const std::string& stem) {
  const auto path = *config.paths.gt_dir / (stem + ".png");
  if (!fs::exists(path)) throw DataError("missing ground truth: " + path.string());
  return read_png_indices(path);
}

}  // namespace

json run_group(const RunConfig& config) {
  const auto encoders = build_encoders(config.encoder);
  Manifest manifest("group", config);
  const auto images = load_inputs(config, encoders.vision, manifest, nullptr);
  json summary = {{"mode", config.grouping.per_image ? "per_image" : "codebook"}};
  require_any(config, manifest, !images.empty());

  std::optional<Codebook> codebook;
  if (!config.grouping.per_image) {
    const auto features = feature_list(images);
    codebook = obtain_codebook(config, features, summary);
    save_codebook(config.paths.out_dir / "codebook.tensors", *codebook);
  }
  for (const auto& li : images) {
    const auto name = li.input.path.filename().string();
    try {
      const auto grouped = group_image(encoders.vision, li.image, config.preprocessing, config.grouping,
                                       codebook ? &*codebook : nullptr, &li.features);
      TensorFile tf;
      tf.metadata = {{"format", "seggroup.region_masks"},
                     {"num_ids", grouped.masks.num_ids},
                     {"shared_ids", grouped.masks.shared_ids}};
      const auto& lo = grouped.masks.low_res;
      const auto hi = restore_grid(grouped.masks.high_res, grouped.prepared);
      tf.put_i32("low_res", {lo.height, lo.width}, lo.cells);
      tf.put_i32("high_res", {hi.height, hi.width}, hi.cells);
      tf.save(config.paths.out_dir / "masks" / (li.input.stem + ".tensors"));
      if (grouped.masks.num_ids <= 256) write_png_gray(config.paths.out_dir / "masks" / (li.input.stem + ".png"), hi);
      auto& entry = manifest.ok(name);
      entry["regions"] = grouped.masks.present_ids.size();
      if (!grouped.warnings.empty()) entry["warnings"] = grouped.warnings;
    } catch (const DataError& e) {
      manifest.error(name, e.what());
    }
  }
  require_any(config, manifest, !manifest.all_failed());
  summary["images"] = manifest.succeeded();
  write_run_files(config, manifest, summary);
  return summary;
}

json run_segment(const RunConfig& config) {
  const auto encoders = build_encoders(config.encoder);
  Manifest manifest("segment", config);
  const auto images = load_inputs(config, encoders.vision, manifest, nullptr);
  require_any(config, manifest, !images.empty());
  json summary = json::object();
  const auto segmenter = make_segmenter(config, encoders, images, summary);
  const auto palette = label_palette();
  for (const auto& li : images) {
    const auto name = li.input.path.filename().string();
    try {
      const auto seg = segmenter(li);
      const auto& out = config.paths.out_dir;
      save_label_map(out / "labels" / (li.input.stem + ".png"), out / "labels" / (li.input.stem + ".json"),
                     seg.label_map);
      write_png_rgb(out / "overlays" / (li.input.stem + ".png"),
                    overlay_labels(raster_from_image(li.image), seg.label_map.labels, palette));
      auto& entry = manifest.ok(name);
      entry["regions"] = seg.regions.embeddings.size();
      if (!seg.regions.omitted.empty()) entry["omitted_regions"] = omitted_json(seg.regions.omitted);
      if (!seg.grouped.warnings.empty()) entry["warnings"] = seg.grouped.warnings;
    } catch (const DataError& e) {
      manifest.error(name, e.what());
    }
  }
  require_any(config, manifest, !manifest.all_failed());
  summary["images"] = manifest.succeeded();
  write_run_files(config, manifest, summary);
  return summary;
}

json run_finetune(const RunConfig& config) {
  if (config.grouping.per_image) throw ConfigError("fine-tuning needs grouping.mode 'codebook'");
  if (!config.paths.captions_jsonl) throw ConfigError("paths.captions_jsonl is required for finetune");
  const auto encoders = build_encoders(config.encoder);
  Manifest manifest("finetune", config);
  json summary = json::object();

  const auto records = load_captions_jsonl(*config.paths.captions_jsonl);
  const auto caption_dir = config.paths.captions_jsonl->parent_path();
  const auto categories = load_categories(config, false);

  NounLexicon lexicon;
  if (config.adaption.lexicon_file) {
    for (auto& w : load_word_list(*config.adaption.lexicon_file)) lexicon.nouns.insert(w);
  } else if (!categories.names.empty()) {
    for (const auto& w : categories.names) lexicon.nouns.insert(w);
  } else {
    throw ConfigError("finetune needs adaption.lexicon_file or recognition.category_file");
  }
  if (config.adaption.stopwords_file)
    for (auto& w : load_word_list(*config.adaption.stopwords_file)) lexicon.stopwords.insert(w);

  // Load images and grouping features once.
  struct Loaded {
    const CaptionRecord* record;
    Image prepared;
  };
  std::vector<Loaded> loaded;
  std::vector<PatchFeatureMap> features;
  for (const auto& rec : records) {
    const fs::path path = fs::path(rec.image).is_absolute() ? fs::path(rec.image) : caption_dir / rec.image;
    try {
      auto prepared = prepare_image(load_image(path), config.preprocessing).image;
      if (!config.paths.codebook) features.push_back(patch_features(encoders.vision, prepared));
      loaded.push_back({&rec, std::move(prepared)});
    } catch (const DataError& e) {
      manifest.error(rec.image, e.what());
    }
  }
  if (loaded.empty()) throw DataError("no training image could be loaded");
  const auto codebook = obtain_codebook(config, features, summary);
  features.clear();

  std::vector<AlignmentPair> pairs;
  for (const auto& l : loaded) {
    auto pair = prepare_pair(l.prepared, *l.record, codebook, encoders, lexicon, categories.templates,
                             config.recognition.strategy);
    if (!pair) {
      manifest.error(l.record->image, "caption has no lexicon noun");
      continue;
    }
    auto& entry = manifest.ok(l.record->image);
    entry["nouns"] = pair->nouns;
    pairs.push_back(std::move(*pair));
  }
  if (pairs.size() < 2) throw DataError("fine-tuning needs at least two usable caption records");

  // Seeded split into training and validation pairs.
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(config.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::floor(config.adaption.val_fraction * pairs.size()));
  std::vector<AlignmentPair> train, val;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_val ? val : train).push_back(std::move(pairs[order[i]]));
  if (train.size() < 2) throw DataError("fine-tuning needs at least two training pairs after the split");

  RegionTokenBank bank = RegionTokenBank::zeros(codebook.size(), encoders.vision.dim());
  std::int64_t start_step = 0;
  if (config.paths.token_bank) {
    auto [loaded_bank, step] = load_token_bank(*config.paths.token_bank);
    if (loaded_bank.size() != codebook.size() || loaded_bank.tokens.cols() != encoders.vision.dim())
      throw ConfigError("token bank shape does not match the codebook and encoder");
    bank = std::move(loaded_bank);
    start_step = step;
    spdlog::info("resuming from step {}", step);
  }

  const auto& opt = config.adaption.optimizer;
  const auto val_loss = [&](const RegionTokenBank& b) -> json {
    if (val.size() < 2) return nullptr;
    return evaluation_loss(encoders.vision, val, b, opt.batch_size, opt.direction, opt.loss_form);
  };
  summary["train_pairs"] = train.size();
  summary["val_pairs"] = val.size();
  summary["initial_val_loss"] = val_loss(bank);

  std::ostringstream csv;
  csv << "step,epoch,loss,inverse_temperature\n";
  csv.precision(10);
  const auto result = train_token_bank(encoders.vision, train, bank, opt, start_step, [&](const TrainingLogEntry& e) {
    csv << e.step << "," << e.epoch << "," << e.loss << "," << e.inverse_temperature << "\n";
  });

  summary["final_val_loss"] = val_loss(bank);
  summary["start_step"] = start_step;
  summary["final_step"] = result.final_step;
  summary["inverse_temperature"] = bank.inverse_temperature();
  const auto& out = config.paths.out_dir;
  save_codebook(out / "codebook.tensors", codebook);
  save_token_bank(out / "token_bank.tensors", bank, result.final_step);
  write_text_atomic(out / "loss.csv", csv.str());
  write_text_atomic(out / "report.json", summary.dump(2) + "\n");
  write_run_files(config, manifest, summary);
  return summary;
}

json run_eval(const RunConfig& config) {
  if (!config.paths.gt_dir) throw ConfigError("paths.gt_dir is required for eval");
  const auto encoders = build_encoders(config.encoder);
  Manifest manifest("eval", config);
  const auto images = load_inputs(config, encoders.vision, manifest, nullptr);
  require_any(config, manifest, !images.empty());
  json summary = json::object();
  const auto segmenter = make_segmenter(config, encoders, images, summary);
  ConfusionAccumulator acc(segmenter.recognizer.vocabulary.num_labels());
  for (const auto& li : images) {
    const auto name = li.input.path.filename().string();
    try {
      const auto gt = load_gt(config, li.input.stem);
      const auto seg = segmenter(li);
      if (gt.height != seg.label_map.labels.height || gt.width != seg.label_map.labels.width)
        throw DataError("ground truth is " + std::to_string(gt.height) + "x" + std::to_string(gt.width) +
                        " but the image is " + std::to_string(li.image.height) + "x" + std::to_string(li.image.width));
      ConfusionAccumulator one(acc.num_classes());
      try {
        one.accumulate(seg.label_map.labels, gt);
      } catch (const PreconditionError& e) {
        throw DataError(e.what());
      }
      acc.merge(one);
      manifest.ok(name);
    } catch (const DataError& e) {
      manifest.error(name, e.what());
    }
  }
  require_any(config, manifest, !manifest.all_failed());
  auto report = miou_report(miou(acc), acc.images());
  report["config_hash"] = config.hash();
  report["classes"] = segmenter.recognizer.vocabulary.legend();
  summary["eval"] = report;
  write_text_atomic(config.paths.out_dir / "eval.json", report.dump(2) + "\n");
  write_run_files(config, manifest, summary);
  return report;
}

json run_upper_bound(const RunConfig& config) {
  if (!config.paths.gt_dir) throw ConfigError("paths.gt_dir is required for upper-bound");
  const auto encoders = build_encoders(config.encoder);
  Manifest manifest("upper-bound", config);
  const auto images = load_inputs(config, encoders.vision, manifest, nullptr);
  require_any(config, manifest, !images.empty());
  json summary = json::object();

  std::optional<Codebook> codebook;
  if (!config.grouping.per_image) {
    const auto features = feature_list(images);
    codebook = obtain_codebook(config, features, summary);
  }

  std::vector<std::pair<const LoadedImage*, IdGrid>> gts;
  for (const auto& li : images) {
    try {
      gts.emplace_back(&li, load_gt(config, li.input.stem));
    } catch (const DataError& e) {
      manifest.error(li.input.path.filename().string(), e.what());
    }
  }
  UpperBoundOptions options;
  int num_classes = 0;
  if (config.recognition.category_file) {
    const auto vocab = make_vocabulary(load_categories(config, true));
    num_classes = vocab.num_labels();
    if (vocab.has_background) options.background_id = kBackgroundLabel;
  } else {
    for (const auto& [li, gt] : gts)
      for (int v : gt.cells)
        if (v != kIgnoreLabel) num_classes = std::max(num_classes, v + 1);
  }
  if (num_classes < 1) throw DataError("ground truth carries no labeled pixel");

  ConfusionAccumulator acc(num_classes);
  double per_image_sum = 0;
  int per_image_count = 0;
  for (const auto& [li, gt] : gts) {
    const auto name = li->input.path.filename().string();
    try {
      const auto grouped = group_image(encoders.vision, li->image, config.preprocessing, config.grouping,
                                       codebook ? &*codebook : nullptr, &li->features);
      const auto regions = restore_grid(grouped.masks.high_res, grouped.prepared);
      if (regions.height != gt.height || regions.width != gt.width)
        throw DataError("ground truth shape differs from the image");
      const auto labels = upper_bound_labels(regions, gt, options);
      ConfusionAccumulator one(num_classes);
      try {
        one.accumulate(labels, gt);
      } catch (const PreconditionError& e) {
        throw DataError(e.what());
      }
      auto& entry = manifest.ok(name);
      if (one.total() > 0) {
        const double m = miou(one).miou;
        entry["miou"] = m;
        per_image_sum += m;
        ++per_image_count;
      }
      acc.merge(one);
    } catch (const DataError& e) {
      manifest.error(name, e.what());
    }
  }
  require_any(config, manifest, !manifest.all_failed());
  auto report = miou_report(miou(acc), acc.images());
  report["mean_per_image_miou"] = per_image_count ? per_image_sum / per_image_count : 0.0;
  report["config_hash"] = config.hash();
  summary["upper_bound"] = report;
  write_text_atomic(config.paths.out_dir / "upper_bound.json", report.dump(2) + "\n");
  write_run_files(config, manifest, summary);
  return report;
}

json run_bench_masking(const RunConfig& config) {
  const auto encoders = build_encoders(config.encoder);
  Manifest manifest("bench-masking", config);
  Image image;
  if (config.paths.images_dir) {
    const auto first = list_images(config).front();
    image = load_image(first.path);
    manifest.ok(first.path.filename().string());
  } else {
    SyntheticOptions opts = config.synthesize;
    opts.image_size = config.bench.image_size;
    image = image_from_raster(render_sample(0, opts).image);
  }
  const auto prepared = prepare_image(image, config.preprocessing);
  GroupingSettings settings = config.grouping;
  settings.per_image = true;
  settings.num_regions = config.bench.num_regions;
  settings.upsample = UpsampleMode::replicate;
  const auto grouped = group_image(encoders.vision, image, config.preprocessing, settings, nullptr);
  const MaskingStrategy strategies[] = {MaskingStrategy::pixel_mask, MaskingStrategy::token_mask,
                                        MaskingStrategy::context_aware};
  const auto timings = benchmark_masking(encoders.vision, prepared.image, grouped.masks, strategies, config.bench.timing);
  auto report = benchmark_report(timings, static_cast<int>(grouped.masks.present_ids.size()));
  report["patches"] = grouped.features.patch_count();
  report["config_hash"] = config.hash();
  write_text_atomic(config.paths.out_dir / "bench_masking.json", report.dump(2) + "\n");
  write_run_files(config, manifest, report);
  return report;
}

json run_synthesize(const RunConfig& config) {
  const auto samples = synthesize_corpus(config.synthesize);
  write_corpus(config.paths.out_dir, samples);
  Manifest manifest("synthesize", config);
  for (const auto& s : samples) {
    auto& entry = manifest.ok(s.caption.image);
    entry["rendered"] = s.rendered;
    entry["mentioned"] = s.mentioned;
  }
  // Ready-to-use run config pointing at the corpus (paths relative to the corpus directory).
  const json run = {{"seed", config.seed},
                    {"grouping", {{"M", 40}}},
                    {"recognition",
                     {{"category_file", "categories.txt"}, {"background_pool_file", "background_pool.txt"}}},
                    {"adaption", {{"lexicon_file", "lexicon.txt"}, {"stopwords_file", "stopwords.txt"}}},
                    {"paths",
                     {{"images_dir", "images"}, {"gt_dir", "gt"}, {"captions_jsonl", "captions.jsonl"},
                      {"out_dir", "runs"}}}};
  write_text_atomic(config.paths.out_dir / "run.json", run.dump(2) + "\n");
  const json summary = {{"images", samples.size()}, {"dir", config.paths.out_dir.string()}};
  write_run_files(config, manifest, summary);
  return summary;
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"group",       "segment",       "finetune",  "eval",
                                                 "upper-bound", "bench-masking", "synthesize"};
  return names;
}

json run_command(std::string_view name, const RunConfig& config) {
  if (name == "group") return run_group(config);
  if (name == "segment") return run_segment(config);
  if (name == "finetune") return run_finetune(config);
  if (name == "eval") return run_eval(config);
  if (name == "upper-bound") return run_upper_bound(config);
  if (name == "bench-masking") return run_bench_masking(config);
  if (name == "synthesize") return run_synthesize(config);
  throw ConfigError("unknown command '" + std::string(name) + "'");
}

}  // namespace seggroup
