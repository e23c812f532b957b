// SPDX-License-Identifier: Apache-2.0
#include "seggroup/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "seggroup/recognition.hpp"
#include "seggroup/tokenizer.hpp"

namespace seggroup {

namespace {

Matrix unit_rows(const Matrix& m, const char* what) {
  Matrix out = m;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double n = out.row(r).norm();
    if (!(n > 0)) throw PreconditionError(std::string("zero-norm ") + what + " embedding at row " + std::to_string(r));
    out.row(r) /= n;
  }
  return out;
}

void check_pair_shapes(const Matrix& nouns, const Matrix& regions) {
  if (nouns.rows() < 1) throw PreconditionError("need at least one noun embedding");
  if (regions.rows() < 1) throw PreconditionError("need at least one region embedding");
  if (nouns.cols() != regions.cols()) throw PreconditionError("noun and region embeddings differ in dimension");
}

// Row-wise argmax of a similarity table, ties toward the lowest column.
std::vector<int> row_argmax(const Matrix& table) {
  std::vector<int> out(static_cast<std::size_t>(table.rows()));
  for (Eigen::Index r = 0; r < table.rows(); ++r) {
    int best = 0;
    for (Eigen::Index c = 1; c < table.cols(); ++c)
      if (table(r, c) > table(r, best)) best = static_cast<int>(c);
    out[r] = best;
  }
  return out;
}

// Adds d cos(a, b) / d b scaled by `weight` into `grad`, given unit a_hat and b with norm b_norm.
void add_cos_grad_wrt_b(const RowVector& a_hat, const RowVector& b_hat, double b_norm, double weight,
                        Eigen::Ref<RowVector> grad) {
  const double cos = a_hat.dot(b_hat);
  grad += weight * (a_hat - cos * b_hat) / b_norm;
}

double log_sum_exp(const Eigen::Ref<const RowVector>& z) {
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

}  // namespace

std::string direction_name(AssignmentDirection d) {
  switch (d) {
    case AssignmentDirection::noun_to_region: return "noun_to_region";
    case AssignmentDirection::region_to_noun: return "region_to_noun";
    case AssignmentDirection::bidirection: return "bidirection";
  }
  return "?";
}

AssignmentDirection parse_direction(std::string_view name) {
  if (name == "noun_to_region") return AssignmentDirection::noun_to_region;
  if (name == "region_to_noun") return AssignmentDirection::region_to_noun;
  if (name == "bidirection") return AssignmentDirection::bidirection;
  throw ConfigError("unknown assignment direction '" + std::string(name) + "'");
}

std::string loss_form_name(LossForm f) { return f == LossForm::log ? "log" : "literal"; }

LossForm parse_loss_form(std::string_view name) {
  if (name == "log") return LossForm::log;
  if (name == "literal") return LossForm::literal;
  throw ConfigError("unknown loss form '" + std::string(name) + "'");
}

void CaptionRecord::validate() const {
  if (caption.empty()) throw DataError("caption record for '" + image + "' has an empty caption");
  if (nouns && nouns->empty()) throw DataError("caption record for '" + image + "' has an empty noun list");
}

std::vector<CaptionRecord> load_captions_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read captions '" + path.string() + "'");
  std::vector<CaptionRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CaptionRecord r;
      r.image = j.at("image").get<std::string>();
      r.caption = j.at("caption").get<std::string>();
      if (j.contains("nouns") && !j.at("nouns").is_null()) r.nouns = j.at("nouns").get<std::vector<std::string>>();
      r.validate();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string caption_to_json_line(const CaptionRecord& record) {
  nlohmann::json j = {{"image", record.image}, {"caption", record.caption}};
  if (record.nouns) j["nouns"] = *record.nouns;
  return j.dump();
}

NounExtraction extract_nouns(const CaptionRecord& record, const NounLexicon& lexicon) {
  if (record.nouns) return {*record.nouns, record.nouns->empty()};
  if (lexicon.nouns.empty()) throw ConfigError("noun lexicon is empty");
  NounExtraction out;
  std::unordered_set<std::string> seen;
  for (auto& w : split_words(record.caption)) {
    if (lexicon.stopwords.count(w) || !lexicon.nouns.count(w)) continue;
    if (seen.insert(w).second) out.nouns.push_back(std::move(w));
  }
  out.flagged = out.nouns.empty();
  return out;
}

Matrix embed_nouns(std::span<const std::string> nouns, std::span<const std::string> templates,
                   const TextEncoder& text_encoder) {
  if (nouns.empty()) throw PreconditionError("embed_nouns needs at least one noun");
  return embed_prompts(nouns, templates, text_encoder);
}

NounRegionAssignment assign_nouns(const Matrix& noun_embs, const Matrix& region_embs) {
  check_pair_shapes(noun_embs, region_embs);
  const Matrix table = unit_rows(noun_embs, "noun") * unit_rows(region_embs, "region").transpose();
  return {row_argmax(table)};
}

ScoreWithGrad image_sentence_score_grad(const Matrix& noun_embs, const Matrix& region_embs,
                                        AssignmentDirection direction) {
  check_pair_shapes(noun_embs, region_embs);
  const Matrix n_hat = unit_rows(noun_embs, "noun");
  const Matrix r_hat = unit_rows(region_embs, "region");
  const Vector r_norm = region_embs.rowwise().norm();
  const Matrix table = n_hat * r_hat.transpose();  // (N_T, K)

  ScoreWithGrad out;
  out.d_regions = Matrix::Zero(region_embs.rows(), region_embs.cols());

  double n2r = 0, r2n = 0;
  const double w_n2r = direction == AssignmentDirection::bidirection ? 0.5 : 1.0;
  const double w_r2n = w_n2r;

  if (direction != AssignmentDirection::region_to_noun) {
    const auto sigma = row_argmax(table);
    const double inv = 1.0 / static_cast<double>(noun_embs.rows());
    for (Eigen::Index l = 0; l < noun_embs.rows(); ++l) {
      const int k = sigma[l];
      n2r += table(l, k) * inv;
      add_cos_grad_wrt_b(n_hat.row(l), r_hat.row(k), r_norm[k], w_n2r * inv, out.d_regions.row(k));
    }
  }
  if (direction != AssignmentDirection::noun_to_region) {
    const Matrix table_t = table.transpose();  // (K, N_T)
    const auto pi = row_argmax(table_t);
    const double inv = 1.0 / static_cast<double>(region_embs.rows());
    for (Eigen::Index k = 0; k < region_embs.rows(); ++k) {
      const int l = pi[k];
      r2n += table_t(k, l) * inv;
      add_cos_grad_wrt_b(n_hat.row(l), r_hat.row(k), r_norm[k], w_r2n * inv, out.d_regions.row(k));
    }
  }
  switch (direction) {
    case AssignmentDirection::noun_to_region: out.score = n2r; break;
    case AssignmentDirection::region_to_noun: out.score = r2n; break;
    case AssignmentDirection::bidirection: out.score = 0.5 * (n2r + r2n); break;
  }
  return out;
}

double image_sentence_score(const Matrix& noun_embs, const Matrix& region_embs, AssignmentDirection direction) {
  return image_sentence_score_grad(noun_embs, region_embs, direction).score;
}

LossResult contrastive_loss(const ScoreMatrix& scores, double logit_scale, LossForm form) {
  const Matrix& s = scores.scores;
  if (s.rows() != s.cols()) throw PreconditionError("score matrix must be square");
  const auto b = s.rows();
  if (b < 1) throw PreconditionError("score matrix must have B >= 1");
  if (!s.allFinite() || !std::isfinite(logit_scale)) throw PreconditionError("non-finite scores or logit scale");

  const double raw_t = std::exp(logit_scale);
  const bool clamped = raw_t > RegionTokenBank::kMaxInverseTemperature;
  const double t = clamped ? RegionTokenBank::kMaxInverseTemperature : raw_t;
  const Matrix z = s * t;
  const double inv_b = 1.0 / static_cast<double>(b);

  // Row softmax p (caption -> images) and column softmax q (image -> captions).
  Matrix p(b, b), q(b, b);
  Vector row_lse(b), col_lse(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    row_lse[i] = log_sum_exp(z.row(i));
    p.row(i) = (z.row(i).array() - row_lse[i]).exp().matrix();
  }
  for (Eigen::Index j = 0; j < b; ++j) {
    col_lse[j] = log_sum_exp(z.col(j).transpose());
    q.col(j) = (z.col(j).array() - col_lse[j]).exp().matrix();
  }

  LossResult out;
  Matrix dz = Matrix::Zero(b, b);
  if (form == LossForm::log) {
    for (Eigen::Index i = 0; i < b; ++i) out.value -= inv_b * ((z(i, i) - row_lse[i]) + (z(i, i) - col_lse[i]));
    dz = inv_b * (p + q);
    dz.diagonal().array() -= 2.0 * inv_b;
  } else {
    for (Eigen::Index i = 0; i < b; ++i) out.value -= inv_b * (p(i, i) + q(i, i));
    for (Eigen::Index i = 0; i < b; ++i) {
      // d p_ii / d z_ik = p_ii (delta_ik - p_ik)
      dz.row(i) += inv_b * p(i, i) * p.row(i);
      dz(i, i) -= inv_b * p(i, i);
      // d q_jj / d z_ij = q_jj (delta_ij - q_ij), here with j = i
      dz.col(i) += inv_b * q(i, i) * q.col(i);
      dz(i, i) -= inv_b * q(i, i);
    }
  }
  out.d_scores = dz * t;
  out.d_logit_scale = clamped ? 0.0 : (dz.cwiseProduct(s)).sum() * t;
  return out;
}

BatchObjective batch_objective(const VisionEncoder& vision, std::span<const AlignmentPair* const> batch,
                               const RegionTokenBank& bank, AssignmentDirection direction, LossForm form,
                               bool with_grad) {
  const auto b = static_cast<Eigen::Index>(batch.size());
  if (b < 1) throw PreconditionError("empty batch");
  std::vector<Matrix> region_embs(batch.size());
  std::vector<std::vector<ClassStreamCache>> caches(batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto embs = vision.query_regions(batch[j]->regions, &bank, with_grad ? &caches[j] : nullptr);
    if (embs.empty()) throw DataError("image '" + batch[j]->image_ref + "' has no regions");
    Matrix m(static_cast<Eigen::Index>(embs.size()), embs.front().vector.size());
    for (std::size_t k = 0; k < embs.size(); ++k) m.row(static_cast<Eigen::Index>(k)) = embs[k].vector.transpose();
    region_embs[j] = std::move(m);
  }

  BatchObjective out;
  out.scores.scores = Matrix(b, b);
  std::vector<std::vector<Matrix>> score_grads(batch.size(), std::vector<Matrix>(batch.size()));
  for (Eigen::Index i = 0; i < b; ++i) {
    for (Eigen::Index j = 0; j < b; ++j) {
      auto sg = image_sentence_score_grad(batch[i]->noun_embs, region_embs[j], direction);
      out.scores.scores(i, j) = sg.score;
      if (with_grad) score_grads[i][j] = std::move(sg.d_regions);
    }
  }
  const auto loss = contrastive_loss(out.scores, bank.logit_scale, form);
  out.loss = loss.value;
  if (!with_grad) return out;

  out.logit_scale_grad = loss.d_logit_scale;
  out.token_grad = Matrix::Zero(bank.tokens.rows(), bank.tokens.cols());
  for (Eigen::Index j = 0; j < b; ++j) {
    Matrix d_regions = Matrix::Zero(region_embs[j].rows(), region_embs[j].cols());
    for (Eigen::Index i = 0; i < b; ++i) d_regions += loss.d_scores(i, j) * score_grads[i][j];
    vision.backward_regions(batch[j]->regions, caches[j], d_regions, out.token_grad);
  }
  return out;
}

AdamW::AdamW(const RegionTokenBank& bank, const AdaptionConfig& config)
    : config_(config),
      m_(Matrix::Zero(bank.tokens.rows(), bank.tokens.cols())),
      v_(Matrix::Zero(bank.tokens.rows(), bank.tokens.cols())) {}

void AdamW::step(RegionTokenBank& bank, const Matrix& token_grad, double logit_scale_grad) {
  if (token_grad.rows() != bank.tokens.rows() || token_grad.cols() != bank.tokens.cols())
    throw PreconditionError("gradient shape does not match the token bank");
  if (m_.rows() != bank.tokens.rows() || m_.cols() != bank.tokens.cols())
    throw PreconditionError("optimizer state does not match the token bank");
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = config_.lr;

  bank.tokens *= (1.0 - lr * config_.weight_decay);
  m_ = b1 * m_ + (1 - b1) * token_grad;
  v_ = b2 * v_ + (1 - b2) * token_grad.cwiseAbs2();
  bank.tokens.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + config_.eps);

  m_scale_ = b1 * m_scale_ + (1 - b1) * logit_scale_grad;
  v_scale_ = b2 * v_scale_ + (1 - b2) * logit_scale_grad * logit_scale_grad;
  bank.logit_scale -= lr * (m_scale_ / c1) / (std::sqrt(v_scale_ / c2) + config_.eps);
  // Keep exp(logit_scale) inside the clamp so its gradient does not vanish for good.
  bank.logit_scale = std::min(bank.logit_scale, std::log(RegionTokenBank::kMaxInverseTemperature));
}

StepResult adaption_step(const VisionEncoder& vision, std::span<const AlignmentPair* const> batch,
                         RegionTokenBank& bank, AdamW& optimizer, const AdaptionConfig& config) {
  std::vector<const AlignmentPair*> valid;
  for (const auto* p : batch)
    if (p && p->noun_embs.rows() > 0 && !p->regions.queries.empty()) valid.push_back(p);
  StepResult result;
  result.valid = static_cast<int>(valid.size());
  if (valid.empty()) {
    spdlog::warn("batch has no valid caption records; step skipped");
    result.skipped = true;
    return result;
  }
  const auto objective = batch_objective(vision, valid, bank, config.direction, config.loss_form, true);
  optimizer.step(bank, objective.token_grad, objective.logit_scale_grad);
  result.loss = objective.loss;
  return result;
}

std::optional<AlignmentPair> prepare_pair(const Image& image, const CaptionRecord& record, const Codebook& codebook,
                                          const Encoders& encoders, const NounLexicon& lexicon,
                                          std::span<const std::string> templates, MaskingStrategy strategy) {
  const auto extraction = extract_nouns(record, lexicon);
  if (extraction.flagged) {
    spdlog::warn("caption for '{}' has no nouns; record skipped", record.image);
    return std::nullopt;
  }
  const auto& vision = encoders.vision;
  AlignmentPair pair;
  pair.image_ref = record.image;
  pair.nouns = extraction.nouns;
  pair.noun_embs = embed_nouns(pair.nouns, templates, encoders.text);

  auto stream = vision.encode_patches(image);
  PatchFeatureMap features{stream.grid_height, stream.grid_width, image.size(), stream.features};
  const auto low_res = cluster_image(features, codebook);
  if (strategy == MaskingStrategy::context_aware) {
    pair.regions.streams.push_back(std::move(stream));
    for (int id : distinct_ids(low_res)) pair.regions.queries.push_back({id, 0, cells_with_id(low_res, id)});
  } else {
    const auto masks = upsample_masks(features, low_res, codebook, image.size(), UpsampleMode::replicate);
    pair.regions = vision.prepare_regions(image, masks, strategy);
  }
  return pair;
}

double evaluation_loss(const VisionEncoder& vision, std::span<const AlignmentPair> pairs, const RegionTokenBank& bank,
                       int batch_size, AssignmentDirection direction, LossForm form) {
  if (batch_size < 2) throw ConfigError("evaluation batch size must be >= 2");
  double total = 0;
  std::size_t weight = 0;
  for (std::size_t start = 0; start < pairs.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(pairs.size(), start + static_cast<std::size_t>(batch_size));
    if (end - start < 2) continue;
    std::vector<const AlignmentPair*> batch;
    for (auto i = start; i < end; ++i) batch.push_back(&pairs[i]);
    total += batch_objective(vision, batch, bank, direction, form, false).loss * static_cast<double>(batch.size());
    weight += batch.size();
  }
  if (weight == 0) throw PreconditionError("evaluation needs at least two pairs");
  return total / static_cast<double>(weight);
}

TrainingResult train_token_bank(const VisionEncoder& vision, std::span<const AlignmentPair> pairs,
                                RegionTokenBank& bank, const AdaptionConfig& config, std::int64_t start_step,
                                const std::function<void(const TrainingLogEntry&)>& on_step) {
  if (config.batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (config.epochs < 0) throw ConfigError("epochs must be >= 0");
  AdamW optimizer(bank, config);
  TrainingResult result;
  std::int64_t step = start_step;
  std::vector<std::size_t> order(pairs.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    if (config.shuffle) {
      std::mt19937_64 rng(config.seed + static_cast<std::uint64_t>(epoch) * 0x9E3779B97F4A7C15ull);
      std::shuffle(order.begin(), order.end(), rng);
    }
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      if (end - start < 2) continue;
      std::vector<const AlignmentPair*> batch;
      for (auto i = start; i < end; ++i) batch.push_back(&pairs[order[i]]);
      const auto r = adaption_step(vision, batch, bank, optimizer, config);
      if (r.skipped) continue;
      ++step;
      TrainingLogEntry entry{step, epoch, r.loss, bank.inverse_temperature()};
      result.log.push_back(entry);
      if (on_step) on_step(entry);
    }
  }
  result.final_step = step;
  return result;
}

}  // namespace seggroup
