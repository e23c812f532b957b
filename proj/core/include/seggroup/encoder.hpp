// SPDX-License-Identifier: Apache-2.0
//
// Miniature vision and text transformers.
//
// Class tokens are query-only spectators: they read keys/values of patch
// tokens but are never read by patches or by each other. The patch stream
// of an image is therefore independent of how many class tokens exist, and
// region recognition reduces to running one small "class stream" per region
// over a cached patch stream.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "seggroup/image.hpp"
#include "seggroup/region_masks.hpp"
#include "seggroup/tokenizer.hpp"
#include "seggroup/types.hpp"

namespace seggroup {

struct EncoderConfig {
  int patch_size = 16;
  int embed_dim = 64;
  int depth = 4;
  int num_heads = 4;
  int text_context_len = 16;
  int projection_dim = 64;
  std::uint64_t seed = 0;

  int mlp_ratio = 4;
  int text_vocab_size = 4096;
  /// Scale of the fixed 2D sinusoidal position code added to patch embeddings.
  double position_scale = 0.5;
  /// Init std multiplier for the vision blocks' residual output projections.
  double residual_scale = 0.35;

  /// Throws ConfigError on invalid combinations.
  void validate() const;
};

enum class MaskingStrategy { pixel_mask, token_mask, context_aware };

std::string strategy_name(MaskingStrategy s);
/// Accepts "pixel_mask"/"a", "token_mask"/"b", "context_aware"/"c".
MaskingStrategy parse_strategy(std::string_view name);

/// Patch-grid features (rows = patches in row-major order).
struct PatchFeatureMap {
  int grid_height = 0;
  int grid_width = 0;
  Size2 image_size;
  Matrix features;  // (grid_height * grid_width, D)

  int dim() const { return static_cast<int>(features.cols()); }
  int patch_count() const { return grid_height * grid_width; }
  /// Throws FormatError naming the first non-finite entry or inconsistent shape.
  void validate() const;
};

void save_features(const std::filesystem::path& path, const PatchFeatureMap& map);
PatchFeatureMap load_external_features(const std::filesystem::path& path);

struct RegionEmbedding {
  Vector vector;
  int region_id = 0;
};

struct TextEmbedding {
  Vector vector;
};

/// The only trainable state during adaption: one token per codebook id plus log(1/tau).
struct RegionTokenBank {
  static constexpr double kInitialInverseTemperature = 14.3;
  static constexpr double kMaxInverseTemperature = 100.0;

  Matrix tokens;  // (M, D)
  double logit_scale = 0.0;

  static RegionTokenBank zeros(int num_regions, int dim);
  int size() const { return static_cast<int>(tokens.rows()); }
  /// exp(logit_scale) clamped to (0, 100].
  double inverse_temperature() const;
};

void save_token_bank(const std::filesystem::path& path, const RegionTokenBank& bank, std::int64_t step);
/// Returns the bank and the training step it was saved at.
std::pair<RegionTokenBank, std::int64_t> load_token_bank(const std::filesystem::path& path);

struct BlockWeights {
  Vector ln1_gain, ln1_bias;
  Matrix wq, wk, wv, wo;  // (D, D), applied to row vectors: y = x W + b
  Vector bq, bk, bv, bo;
  Vector ln2_gain, ln2_bias;
  Matrix w1;  // (D, hidden)
  Vector b1;
  Matrix w2;  // (hidden, D)
  Vector b2;
};

/// Patch-token activations of one forward pass, cached for class-token queries.
struct PatchStream {
  int grid_height = 0;
  int grid_width = 0;
  std::vector<Matrix> keys;    // per layer, (N, D)
  std::vector<Matrix> values;  // per layer, (N, D)
  std::vector<Matrix> hidden;  // per layer input, filled only on request
  Matrix features;             // post-norm final patch states, (N, D)
};

/// Intermediate values of a class-token stream needed for backprop.
struct ClassStreamCache {
  struct Layer {
    Vector input, ln1_hat, query;
    std::vector<Vector> probs;  // per head, over the key set
    Vector attended, mid, ln2_hat, hidden_pre;
    double ln1_inv_std = 0, ln2_inv_std = 0;
  };
  std::vector<Layer> layers;
  Vector final_hat, projected;
  double final_inv_std = 0;
};

struct ImageEncoding {
  PatchFeatureMap features;
  Vector global_embedding;     // unit norm
  std::vector<Matrix> hidden;  // per-layer patch inputs, filled only on request
};

/// One region to encode: the class token query and the patches it may read.
struct RegionQuery {
  int region_id = 0;
  int stream = 0;                  // index into RegionBatch::streams
  std::vector<int> key_patches;    // patch indices visible to the class token
};

/// Precomputed patch streams plus per-region queries for one image.
struct RegionBatch {
  std::vector<PatchStream> streams;
  std::vector<RegionQuery> queries;
  std::vector<int> omitted;  // requested ids with empty masks
  int patch_passes() const { return static_cast<int>(streams.size()); }
};

struct RegionEncoding {
  std::vector<RegionEmbedding> embeddings;  // in requested region order, omitted ids skipped
  std::vector<int> omitted;
  int patch_passes = 0;
};

class VisionEncoder {
 public:
  VisionEncoder(const EncoderConfig& config, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  int dim() const { return config_.embed_dim; }

  /// Whole-image encoding through a single joint [class; patches] sequence.
  ImageEncoding encode_image(const Image& image, bool keep_hidden = false) const;

  /// Patch stream of one forward pass; `block_ids` restricts patch attention to equal ids.
  PatchStream encode_patches(const Image& image, const IdGrid* block_ids = nullptr, bool keep_hidden = false) const;

  /// Builds streams and queries for `region_ids` (defaults to masks.present_ids).
  RegionBatch prepare_regions(const Image& image, const RegionMaskSet& masks, MaskingStrategy strategy,
                              std::span<const int> region_ids = {}) const;

  /// Runs class streams for every query. With a bank, region k starts from base + tokens[k].
  std::vector<RegionEmbedding> query_regions(const RegionBatch& batch, const RegionTokenBank* bank,
                                             std::vector<ClassStreamCache>* caches = nullptr) const;

  /// Accumulates d(loss)/d(tokens) into `token_grad` (M, D), given d(loss)/d(embedding) per query.
  void backward_regions(const RegionBatch& batch, const std::vector<ClassStreamCache>& caches,
                        const Matrix& embedding_grad, Matrix& token_grad) const;

  RegionEncoding encode_regions(const Image& image, const RegionMaskSet& masks, MaskingStrategy strategy,
                                const RegionTokenBank* bank, std::span<const int> region_ids = {}) const;

  /// Single class-token stream from `init` over `key_patches` of `stream`; returns the unit embedding.
  Vector query_class_token(const PatchStream& stream, std::span<const int> key_patches, const Vector& init,
                           ClassStreamCache* cache = nullptr) const;
  /// d(loss)/d(init) for one class stream.
  Vector class_token_backward(const PatchStream& stream, std::span<const int> key_patches,
                              const ClassStreamCache& cache, const Vector& embedding_grad) const;

  const Vector& base_class_token() const { return class_token_; }
  const std::vector<BlockWeights>& blocks() const { return blocks_; }
  const Matrix& patch_weights() const { return patch_w_; }
  const Matrix& projection() const { return proj_; }
  const Vector& post_norm_gain() const { return post_gain_; }
  const Vector& post_norm_bias() const { return post_bias_; }

 private:
  Matrix embed_patches(const Image& image) const;

  EncoderConfig config_;
  PixelStats stats_;
  Matrix patch_w_;  // (P*P*3, D)
  Vector patch_b_;
  Vector class_token_;
  std::vector<BlockWeights> blocks_;
  Vector post_gain_, post_bias_;
  Matrix proj_;  // (D, D_e)
};

class TextEncoder {
 public:
  TextEncoder(const EncoderConfig& config, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  /// Unit-norm embedding. Throws PreconditionError on empty text; truncation is logged.
  TextEmbedding encode_text(std::string_view text) const;
  TextEmbedding encode_tokens(std::span<const int> ids) const;
  const Tokenizer& tokenizer() const { return tokenizer_; }

  const Matrix& token_table() const { return token_table_; }
  const std::vector<BlockWeights>& blocks() const { return blocks_; }

 private:
  EncoderConfig config_;
  Tokenizer tokenizer_;
  Matrix token_table_;  // (vocab, D)
  Matrix positions_;    // (context, D)
  std::vector<BlockWeights> blocks_;
  Vector final_gain_, final_bias_;
  Matrix proj_;
};

struct Encoders {
  VisionEncoder vision;
  TextEncoder text;
};

/// Deterministic construction from the config seed.
Encoders build_encoders(const EncoderConfig& config);

}  // namespace seggroup
