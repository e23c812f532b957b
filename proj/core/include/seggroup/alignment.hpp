// SPDX-License-Identifier: Apache-2.0
//
// Noun-region alignment objective and the token-bank adaption loop.
//
// For caption i with noun embeddings n_l and image j with region embeddings
// r_k, each noun is assigned to its most similar region and the score s_ij
// is the mean cosine over those pairs. Regions that no noun picks contribute
// nothing, so background and unmentioned objects are left unaligned.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "seggroup/encoder.hpp"
#include "seggroup/grouping.hpp"

namespace seggroup {

enum class AssignmentDirection { noun_to_region, region_to_noun, bidirection };
enum class LossForm { log, literal };

std::string direction_name(AssignmentDirection d);
AssignmentDirection parse_direction(std::string_view name);
std::string loss_form_name(LossForm f);
LossForm parse_loss_form(std::string_view name);

struct CaptionRecord {
  std::string image;
  std::string caption;
  std::optional<std::vector<std::string>> nouns;

  void validate() const;
};

/// One JSON object per line: {"image": ..., "caption": ..., "nouns": [...]?}.
std::vector<CaptionRecord> load_captions_jsonl(const std::filesystem::path& path);
std::string caption_to_json_line(const CaptionRecord& record);

struct NounLexicon {
  std::unordered_set<std::string> nouns;
  std::unordered_set<std::string> stopwords;
};

struct NounExtraction {
  std::vector<std::string> nouns;
  bool flagged = false;  // no nouns; the training loop skips the record
};

/// Precomputed nouns win; otherwise lowercase words minus stopwords that appear in the lexicon,
/// deduplicated in order of first appearance.
NounExtraction extract_nouns(const CaptionRecord& record, const NounLexicon& lexicon);

/// Same fill-average-normalize procedure as category prompts. Rows follow `nouns`.
Matrix embed_nouns(std::span<const std::string> nouns, std::span<const std::string> templates,
                   const TextEncoder& text_encoder);

struct NounRegionAssignment {
  std::vector<int> mapping;  // noun l -> region index
};

/// argmax_k cos(n_l, r_k) per noun, ties toward the lowest k.
NounRegionAssignment assign_nouns(const Matrix& noun_embs, const Matrix& region_embs);

struct ScoreWithGrad {
  double score = 0;
  Matrix d_regions;  // d score / d region_embs, (K, D_e)
};

/// Image-sentence score; the assignment is recomputed inside and held fixed for the gradient.
ScoreWithGrad image_sentence_score_grad(const Matrix& noun_embs, const Matrix& region_embs,
                                        AssignmentDirection direction = AssignmentDirection::noun_to_region);
double image_sentence_score(const Matrix& noun_embs, const Matrix& region_embs,
                            AssignmentDirection direction = AssignmentDirection::noun_to_region);

struct ScoreMatrix {
  Matrix scores;  // (B, B): row = caption, column = image
  int batch_size() const { return static_cast<int>(scores.rows()); }
};

struct LossResult {
  double value = 0;
  Matrix d_scores;             // (B, B)
  double d_logit_scale = 0;    // zero while the inverse temperature is clamped
};

/// Symmetric contrastive loss over the score matrix with 1/tau = min(exp(logit_scale), 100).
LossResult contrastive_loss(const ScoreMatrix& scores, double logit_scale, LossForm form = LossForm::log);

/// Everything the adaption step needs for one image-caption pair, computed once.
struct AlignmentPair {
  std::string image_ref;
  RegionBatch regions;  // cached patch streams + region queries
  Matrix noun_embs;     // (N_T, D_e)
  std::vector<std::string> nouns;
};

struct AdaptionConfig {
  double lr = 5e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 32;
  int epochs = 5;
  bool shuffle = true;
  std::uint64_t seed = 0;
  AssignmentDirection direction = AssignmentDirection::noun_to_region;
  LossForm loss_form = LossForm::log;
};

struct BatchObjective {
  double loss = 0;
  ScoreMatrix scores;
  Matrix token_grad;  // (M, D)
  double logit_scale_grad = 0;
};

/// Loss (and optionally gradients) of one batch for a given token bank.
BatchObjective batch_objective(const VisionEncoder& vision, std::span<const AlignmentPair* const> batch,
                               const RegionTokenBank& bank, AssignmentDirection direction, LossForm form,
                               bool with_grad);

/// Decoupled-weight-decay Adam over the token bank. Weight decay applies to tokens only.
class AdamW {
 public:
  AdamW() = default;
  AdamW(const RegionTokenBank& bank, const AdaptionConfig& config);

  void step(RegionTokenBank& bank, const Matrix& token_grad, double logit_scale_grad);
  std::int64_t steps() const { return t_; }

 private:
  AdaptionConfig config_;
  Matrix m_, v_;
  double m_scale_ = 0, v_scale_ = 0;
  std::int64_t t_ = 0;
};

struct StepResult {
  double loss = 0;
  int valid = 0;
  bool skipped = false;
};

/// One optimization step; null entries are records without nouns and are dropped.
StepResult adaption_step(const VisionEncoder& vision, std::span<const AlignmentPair* const> batch,
                         RegionTokenBank& bank, AdamW& optimizer, const AdaptionConfig& config);

/// Builds an AlignmentPair: cluster with the codebook, cache the patch stream, embed nouns.
/// Returns nullopt when the caption yields no nouns.
std::optional<AlignmentPair> prepare_pair(const Image& image, const CaptionRecord& record, const Codebook& codebook,
                                          const Encoders& encoders, const NounLexicon& lexicon,
                                          std::span<const std::string> templates,
                                          MaskingStrategy strategy = MaskingStrategy::context_aware);

/// Mean batch loss over `pairs` in fixed order (no update).
double evaluation_loss(const VisionEncoder& vision, std::span<const AlignmentPair> pairs, const RegionTokenBank& bank,
                       int batch_size, AssignmentDirection direction, LossForm form);

struct TrainingLogEntry {
  std::int64_t step = 0;
  int epoch = 0;
  double loss = 0;
  double inverse_temperature = 0;
};

struct TrainingResult {
  std::vector<TrainingLogEntry> log;
  std::int64_t final_step = 0;
};

/// Runs `config.epochs` epochs of adaption_step over `pairs`, starting at `start_step`.
TrainingResult train_token_bank(const VisionEncoder& vision, std::span<const AlignmentPair> pairs,
                                RegionTokenBank& bank, const AdaptionConfig& config, std::int64_t start_step = 0,
                                const std::function<void(const TrainingLogEntry&)>& on_step = {});

}  // namespace seggroup
