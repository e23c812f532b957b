// SPDX-License-Identifier: Apache-2.0
#include "seggroup/encoder.hpp"

#include <cmath>
#include <limits>
#include <random>

#include <spdlog/spdlog.h>

#include "seggroup/tensor_io.hpp"

namespace seggroup {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Vector random_vector(std::mt19937_64& rng, int n, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

BlockWeights init_block(std::mt19937_64& rng, int dim, int hidden, double out_scale) {
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  BlockWeights w;
  w.ln1_gain = Vector::Ones(dim);
  w.ln1_bias = Vector::Zero(dim);
  w.wq = random_matrix(rng, dim, dim, s);
  w.wk = random_matrix(rng, dim, dim, s);
  w.wv = random_matrix(rng, dim, dim, s);
  w.wo = random_matrix(rng, dim, dim, s * out_scale);
  w.bq = Vector::Zero(dim);
  w.bk = Vector::Zero(dim);
  w.bv = Vector::Zero(dim);
  w.bo = Vector::Zero(dim);
  w.ln2_gain = Vector::Ones(dim);
  w.ln2_bias = Vector::Zero(dim);
  w.w1 = random_matrix(rng, dim, hidden, s);
  w.b1 = Vector::Zero(hidden);
  w.w2 = random_matrix(rng, hidden, dim, out_scale / std::sqrt(static_cast<double>(hidden)));
  w.b2 = Vector::Zero(dim);
  return w;
}

Matrix layer_norm_rows(const Matrix& x, const Vector& gain, const Vector& bias) {
  Matrix out(x.rows(), x.cols());
  const double d = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / d;
    const double var = (x.row(r).array() - mean).square().sum() / d;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    out.row(r) = ((x.row(r).array() - mean) * inv * gain.transpose().array() + bias.transpose().array()).matrix();
  }
  return out;
}

Vector layer_norm(const Vector& x, const Vector& gain, const Vector& bias, Vector& hat, double& inv_std) {
  const double d = static_cast<double>(x.size());
  const double mean = x.sum() / d;
  const double var = (x.array() - mean).square().sum() / d;
  inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
  hat = (x.array() - mean) * inv_std;
  return (hat.array() * gain.array() + bias.array()).matrix();
}

Vector layer_norm_backward(const Vector& dy, const Vector& hat, double inv_std, const Vector& gain) {
  const Vector dhat = dy.cwiseProduct(gain);
  const double d = static_cast<double>(dy.size());
  const double sum = dhat.sum();
  const double dot = dhat.dot(hat);
  return ((d * dhat.array() - sum - hat.array() * dot) * (inv_std / d)).matrix();
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_grad(double x) {
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// Masked (-inf) entries become exact zeros; a clamped vectorized exp would leave denormals.
void softmax_rows(Matrix& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double m = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() == kNegInf).select(0.0, (s.row(r).array() - m).exp()).matrix();
    s.row(r) /= s.row(r).sum();
  }
}

void softmax(Vector& z) {
  const double m = z.maxCoeff();
  z = (z.array() - m).exp().matrix();
  z /= z.sum();
}

// One pre-norm transformer block over a full token sequence.
void block_forward(Matrix& x, const BlockWeights& w, int heads, const Matrix* mask, Matrix* keys_out,
                   Matrix* values_out) {
  const Matrix xn = layer_norm_rows(x, w.ln1_gain, w.ln1_bias);
  const Matrix q = (xn * w.wq).rowwise() + w.bq.transpose();
  Matrix k = (xn * w.wk).rowwise() + w.bk.transpose();
  Matrix v = (xn * w.wv).rowwise() + w.bv.transpose();
  const auto dim = x.cols();
  const auto dh = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix attended(x.rows(), dim);
  for (int h = 0; h < heads; ++h) {
    Matrix s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    if (mask) s += *mask;
    softmax_rows(s);
    attended.middleCols(h * dh, dh) = s * v.middleCols(h * dh, dh);
  }
  x += (attended * w.wo).rowwise() + w.bo.transpose();
  const Matrix xn2 = layer_norm_rows(x, w.ln2_gain, w.ln2_bias);
  Matrix hidden = (xn2 * w.w1).rowwise() + w.b1.transpose();
  hidden = hidden.unaryExpr([](double t) { return gelu(t); });
  x += (hidden * w.w2).rowwise() + w.b2.transpose();
  if (keys_out) *keys_out = std::move(k);
  if (values_out) *values_out = std::move(v);
}

// Fixed 2D sinusoidal code: first half of the channels encodes the row, second half the column.
Matrix position_code(int grid_h, int grid_w, int dim) {
  Matrix pos(grid_h * grid_w, dim);
  const int half = dim / 2;
  for (int y = 0; y < grid_h; ++y) {
    for (int x = 0; x < grid_w; ++x) {
      for (int j = 0; j < dim; ++j) {
        const bool row_axis = j < half;
        const int t = row_axis ? j : j - half;
        const int span = row_axis ? std::max(half, 1) : std::max(dim - half, 1);
        const double freq = std::pow(10000.0, -2.0 * (t / 2) / span);
        const double coord = row_axis ? y : x;
        pos(y * grid_w + x, j) = (t % 2 == 0) ? std::sin(coord * freq) : std::cos(coord * freq);
      }
    }
  }
  return pos;
}

void check_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw DataError(std::string("non-finite values in ") + what);
}

}  // namespace

void EncoderConfig::validate() const {
  if (patch_size < 1) throw ConfigError("patch_size must be >= 1");
  if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
  if (depth < 1) throw ConfigError("depth must be >= 1");
  if (num_heads < 1) throw ConfigError("num_heads must be >= 1");
  if (embed_dim % num_heads != 0)
    throw ConfigError("embed_dim (" + std::to_string(embed_dim) + ") is not divisible by num_heads (" +
                      std::to_string(num_heads) + ")");
  if (projection_dim < 1) throw ConfigError("projection_dim must be >= 1");
  if (text_context_len < 3) throw ConfigError("text_context_len must be >= 3");
  if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
  if (text_vocab_size <= Tokenizer::kFirstWordId) throw ConfigError("text_vocab_size too small");
  if (!std::isfinite(position_scale)) throw ConfigError("position_scale must be finite");
  if (!(residual_scale > 0 && std::isfinite(residual_scale))) throw ConfigError("residual_scale must be positive");
}

std::string strategy_name(MaskingStrategy s) {
  switch (s) {
    case MaskingStrategy::pixel_mask: return "pixel_mask";
    case MaskingStrategy::token_mask: return "token_mask";
    case MaskingStrategy::context_aware: return "context_aware";
  }
  return "?";
}

MaskingStrategy parse_strategy(std::string_view name) {
  if (name == "pixel_mask" || name == "a") return MaskingStrategy::pixel_mask;
  if (name == "token_mask" || name == "b") return MaskingStrategy::token_mask;
  if (name == "context_aware" || name == "c") return MaskingStrategy::context_aware;
  throw ConfigError("unknown masking strategy '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// PatchFeatureMap persistence

void PatchFeatureMap::validate() const {
  if (grid_height <= 0 || grid_width <= 0) throw FormatError("feature map has an empty grid");
  if (features.rows() != static_cast<Eigen::Index>(grid_height) * grid_width)
    throw FormatError("feature rows do not match the grid size");
  if (features.cols() < 1) throw FormatError("feature dimension must be >= 1");
  if (image_size.height % grid_height != 0 || image_size.width % grid_width != 0 ||
      image_size.height / grid_height != image_size.width / grid_width)
    throw FormatError("image size is not an exact patch multiple of the feature grid");
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    for (Eigen::Index c = 0; c < features.cols(); ++c) {
      if (!std::isfinite(features(r, c))) {
        throw FormatError("non-finite feature at index (" + std::to_string(r / grid_width) + ", " +
                          std::to_string(r % grid_width) + ", " + std::to_string(c) + ")");
      }
    }
  }
}

void save_features(const std::filesystem::path& path, const PatchFeatureMap& map) {
  TensorFile file;
  file.metadata = {{"format", "seggroup.features"},
                   {"image_height", map.image_size.height},
                   {"image_width", map.image_size.width}};
  file.put_f64("features", {map.grid_height, map.grid_width, map.dim()},
               std::span<const double>(map.features.data(), static_cast<std::size_t>(map.features.size())));
  file.save(path);
}

PatchFeatureMap load_external_features(const std::filesystem::path& path) {
  const auto file = TensorFile::load(path);
  const auto& e = file.entry("features");
  if (e.shape.size() != 3) throw FormatError("features must have shape (h, w, D)");
  PatchFeatureMap map;
  map.grid_height = static_cast<int>(e.shape[0]);
  map.grid_width = static_cast<int>(e.shape[1]);
  try {
    map.image_size = {file.metadata.at("image_height").get<int>(), file.metadata.at("image_width").get<int>()};
  } catch (const nlohmann::json::exception&) {
    throw FormatError("feature file lacks image_height/image_width metadata");
  }
  const auto values = file.get_f64("features");
  map.features = Matrix(e.shape[0] * e.shape[1], e.shape[2]);
  std::copy(values.begin(), values.end(), map.features.data());
  map.validate();
  return map;
}

// ---------------------------------------------------------------------------
// RegionTokenBank

RegionTokenBank RegionTokenBank::zeros(int num_regions, int dim) {
  if (num_regions < 1 || dim < 1) throw ConfigError("token bank needs M >= 1 and D >= 1");
  RegionTokenBank bank;
  bank.tokens = Matrix::Zero(num_regions, dim);
  bank.logit_scale = std::log(kInitialInverseTemperature);
  return bank;
}

double RegionTokenBank::inverse_temperature() const {
  return std::min(std::exp(logit_scale), kMaxInverseTemperature);
}

void save_token_bank(const std::filesystem::path& path, const RegionTokenBank& bank, std::int64_t step) {
  TensorFile file;
  file.metadata = {{"format", "seggroup.token_bank"}, {"version", 1}, {"step", step}};
  file.put_matrix("tokens", bank.tokens);
  file.put_f64("logit_scale", {1}, std::span<const double>(&bank.logit_scale, 1));
  file.save(path);
}

std::pair<RegionTokenBank, std::int64_t> load_token_bank(const std::filesystem::path& path) {
  const auto file = TensorFile::load(path);
  if (file.metadata.value("format", "") != "seggroup.token_bank")
    throw FormatError("'" + path.string() + "' is not a token bank checkpoint");
  if (file.metadata.value("version", 0) != 1) throw FormatError("unsupported token bank version");
  RegionTokenBank bank;
  bank.tokens = file.get_matrix("tokens");
  const auto scale = file.get_f64("logit_scale");
  if (scale.size() != 1) throw FormatError("logit_scale must be a scalar");
  bank.logit_scale = scale[0];
  if (!bank.tokens.allFinite() || !std::isfinite(bank.logit_scale))
    throw FormatError("token bank contains non-finite values");
  return {std::move(bank), file.metadata.value("step", std::int64_t{0})};
}

// ---------------------------------------------------------------------------
// VisionEncoder

VisionEncoder::VisionEncoder(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const int d = config_.embed_dim;
  const int patch_len = config_.patch_size * config_.patch_size * 3;
  patch_w_ = random_matrix(rng, patch_len, d, 1.0 / std::sqrt(static_cast<double>(patch_len)));
  patch_b_ = Vector::Zero(d);
  class_token_ = random_vector(rng, d, 1.0);
  for (int l = 0; l < config_.depth; ++l) blocks_.push_back(init_block(rng, d, d * config_.mlp_ratio, config_.residual_scale));
  post_gain_ = Vector::Ones(d);
  post_bias_ = Vector::Zero(d);
  proj_ = random_matrix(rng, d, config_.projection_dim, 1.0 / std::sqrt(static_cast<double>(d)));
}

Matrix VisionEncoder::embed_patches(const Image& image) const {
  const int p = config_.patch_size;
  if (image.channels != 3) throw PreconditionError("vision encoder expects 3-channel images");
  if (image.height <= 0 || image.width <= 0 || image.height % p != 0 || image.width % p != 0)
    throw PreconditionError("image size " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                            " is not a multiple of patch size " + std::to_string(p) + " (pad first)");
  const int gh = image.height / p;
  const int gw = image.width / p;
  Matrix patches(gh * gw, p * p * 3);
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      auto row = patches.row(gy * gw + gx);
      int j = 0;
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
          for (int c = 0; c < 3; ++c)
            row[j++] = (image.at(gy * p + y, gx * p + x, c) - stats_.mean[c]) / stats_.stddev[c];
    }
  }
  Matrix x = (patches * patch_w_).rowwise() + patch_b_.transpose();
  if (config_.position_scale != 0.0) x += config_.position_scale * position_code(gh, gw, config_.embed_dim);
  return x;
}

ImageEncoding VisionEncoder::encode_image(const Image& image, bool keep_hidden) const {
  const Matrix patches = embed_patches(image);
  const auto n = patches.rows();
  const int p = config_.patch_size;

  Matrix x(n + 1, config_.embed_dim);
  x.row(0) = class_token_.transpose();
  x.bottomRows(n) = patches;

  // Row = query, column = key. Class token (row/col 0) reads patches only; nobody reads it.
  Matrix mask = Matrix::Zero(n + 1, n + 1);
  mask.col(0).setConstant(kNegInf);

  ImageEncoding out;
  for (const auto& block : blocks_) {
    if (keep_hidden) out.hidden.push_back(x.bottomRows(n));
    block_forward(x, block, config_.num_heads, &mask, nullptr, nullptr);
  }
  const Matrix y = layer_norm_rows(x, post_gain_, post_bias_);
  out.features.grid_height = image.height / p;
  out.features.grid_width = image.width / p;
  out.features.image_size = image.size();
  out.features.features = y.bottomRows(n);
  const Vector e = proj_.transpose() * y.row(0).transpose();
  out.global_embedding = e / e.norm();
  check_finite(out.features.features, "patch features");
  return out;
}

PatchStream VisionEncoder::encode_patches(const Image& image, const IdGrid* block_ids, bool keep_hidden) const {
  Matrix x = embed_patches(image);
  const auto n = x.rows();
  const int p = config_.patch_size;
  PatchStream stream;
  stream.grid_height = image.height / p;
  stream.grid_width = image.width / p;

  Matrix mask;
  if (block_ids) {
    if (block_ids->height != stream.grid_height || block_ids->width != stream.grid_width)
      throw PreconditionError("block mask does not match the patch grid");
    mask = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (block_ids->cells[i] != block_ids->cells[j]) mask(i, j) = kNegInf;
  }
  for (const auto& block : blocks_) {
    if (keep_hidden) stream.hidden.push_back(x);
    Matrix k, v;
    block_forward(x, block, config_.num_heads, block_ids ? &mask : nullptr, &k, &v);
    stream.keys.push_back(std::move(k));
    stream.values.push_back(std::move(v));
  }
  stream.features = layer_norm_rows(x, post_gain_, post_bias_);
  check_finite(stream.features, "patch features");
  return stream;
}

Vector VisionEncoder::query_class_token(const PatchStream& stream, std::span<const int> key_patches,
                                        const Vector& init, ClassStreamCache* cache) const {
  if (key_patches.empty()) throw PreconditionError("class token needs at least one visible patch");
  const int d = config_.embed_dim;
  const int heads = config_.num_heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::vector<int> rows(key_patches.begin(), key_patches.end());
  const bool all = static_cast<Eigen::Index>(rows.size()) == stream.keys.front().rows();

  if (cache) cache->layers.assign(blocks_.size(), {});
  Vector c = init;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& w = blocks_[l];
    const Matrix keys = all ? stream.keys[l] : Matrix(stream.keys[l](rows, Eigen::all));
    const Matrix values = all ? stream.values[l] : Matrix(stream.values[l](rows, Eigen::all));

    Vector hat1;
    double inv1 = 0;
    const Vector cn = layer_norm(c, w.ln1_gain, w.ln1_bias, hat1, inv1);
    const Vector q = w.wq.transpose() * cn + w.bq;
    Vector attended(d);
    std::vector<Vector> probs;
    for (int h = 0; h < heads; ++h) {
      Vector z = keys.middleCols(h * dh, dh) * q.segment(h * dh, dh) * scale;
      softmax(z);
      attended.segment(h * dh, dh) = values.middleCols(h * dh, dh).transpose() * z;
      if (cache) probs.push_back(std::move(z));
    }
    const Vector mid = c + w.wo.transpose() * attended + w.bo;
    Vector hat2;
    double inv2 = 0;
    const Vector cn2 = layer_norm(mid, w.ln2_gain, w.ln2_bias, hat2, inv2);
    const Vector hidden_pre = w.w1.transpose() * cn2 + w.b1;
    const Vector act = hidden_pre.unaryExpr([](double t) { return gelu(t); });
    if (cache) {
      auto& lc = cache->layers[l];
      lc.input = c;
      lc.ln1_hat = std::move(hat1);
      lc.ln1_inv_std = inv1;
      lc.query = q;
      lc.probs = std::move(probs);
      lc.attended = attended;
      lc.mid = mid;
      lc.ln2_hat = std::move(hat2);
      lc.ln2_inv_std = inv2;
      lc.hidden_pre = hidden_pre;
    }
    c = mid + w.w2.transpose() * act + w.b2;
  }
  Vector hat;
  double inv = 0;
  const Vector y = layer_norm(c, post_gain_, post_bias_, hat, inv);
  const Vector e = proj_.transpose() * y;
  if (cache) {
    cache->final_hat = std::move(hat);
    cache->final_inv_std = inv;
    cache->projected = e;
  }
  const Vector r = e / e.norm();
  if (!r.allFinite()) throw DataError("non-finite region embedding");
  return r;
}

Vector VisionEncoder::class_token_backward(const PatchStream& stream, std::span<const int> key_patches,
                                           const ClassStreamCache& cache, const Vector& embedding_grad) const {
  const int d = config_.embed_dim;
  const int heads = config_.num_heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::vector<int> rows(key_patches.begin(), key_patches.end());
  const bool all = static_cast<Eigen::Index>(rows.size()) == stream.keys.front().rows();

  // r = e / |e|
  const double norm = cache.projected.norm();
  const Vector r = cache.projected / norm;
  const Vector de = (embedding_grad - r * r.dot(embedding_grad)) / norm;
  Vector dc = layer_norm_backward(proj_ * de, cache.final_hat, cache.final_inv_std, post_gain_);

  for (std::size_t li = blocks_.size(); li-- > 0;) {
    const auto& w = blocks_[li];
    const auto& lc = cache.layers[li];
    const Matrix keys = all ? stream.keys[li] : Matrix(stream.keys[li](rows, Eigen::all));
    const Matrix values = all ? stream.values[li] : Matrix(stream.values[li](rows, Eigen::all));

    // c_out = mid + W2^T gelu(W1^T LN2(mid) + b1) + b2
    const Vector dact = w.w2 * dc;
    const Vector dhidden = dact.cwiseProduct(lc.hidden_pre.unaryExpr([](double t) { return gelu_grad(t); }));
    const Vector dmid = dc + layer_norm_backward(w.w1 * dhidden, lc.ln2_hat, lc.ln2_inv_std, w.ln2_gain);

    // mid = c_in + Wo^T attended + bo
    const Vector dattended = w.wo * dmid;
    Vector dq(d);
    for (int h = 0; h < heads; ++h) {
      const Vector& p = lc.probs[h];
      const Vector dp = values.middleCols(h * dh, dh) * dattended.segment(h * dh, dh);
      const Vector dz = p.cwiseProduct((dp.array() - p.dot(dp)).matrix());
      dq.segment(h * dh, dh) = keys.middleCols(h * dh, dh).transpose() * dz * scale;
    }
    dc = dmid + layer_norm_backward(w.wq * dq, lc.ln1_hat, lc.ln1_inv_std, w.ln1_gain);
  }
  return dc;
}

RegionBatch VisionEncoder::prepare_regions(const Image& image, const RegionMaskSet& masks, MaskingStrategy strategy,
                                           std::span<const int> region_ids) const {
  const int p = config_.patch_size;
  if (image.height % p != 0 || image.width % p != 0)
    throw PreconditionError("image size is not a multiple of the patch size (pad first)");
  if (masks.low_res.height != image.height / p || masks.low_res.width != image.width / p)
    throw PreconditionError("low-res masks do not match the image patch grid");

  std::vector<int> ids(region_ids.begin(), region_ids.end());
  if (ids.empty()) ids = masks.present_ids;

  RegionBatch batch;
  std::vector<int> all_patches(static_cast<std::size_t>(masks.low_res.size()));
  for (std::size_t i = 0; i < all_patches.size(); ++i) all_patches[i] = static_cast<int>(i);

  switch (strategy) {
    case MaskingStrategy::context_aware:
    case MaskingStrategy::token_mask: {
      batch.streams.push_back(
          encode_patches(image, strategy == MaskingStrategy::token_mask ? &masks.low_res : nullptr));
      for (int id : ids) {
        auto cells = cells_with_id(masks.low_res, id);
        if (cells.empty()) {
          batch.omitted.push_back(id);
          continue;
        }
        batch.queries.push_back({id, 0, std::move(cells)});
      }
      break;
    }
    case MaskingStrategy::pixel_mask: {
      const bool pixel_grid = masks.high_res.height == image.height && masks.high_res.width == image.width;
      for (int id : ids) {
        if (cells_with_id(masks.low_res, id).empty()) {
          batch.omitted.push_back(id);
          continue;
        }
        Image masked = image;
        for (int y = 0; y < image.height; ++y) {
          for (int x = 0; x < image.width; ++x) {
            const int owner = pixel_grid ? masks.high_res.at(y, x) : masks.low_res.at(y / p, x / p);
            if (owner != id)
              for (int c = 0; c < 3; ++c) masked.at(y, x, c) = stats_.mean[c];
          }
        }
        batch.streams.push_back(encode_patches(masked));
        batch.queries.push_back({id, static_cast<int>(batch.streams.size()) - 1, all_patches});
      }
      break;
    }
  }
  return batch;
}

std::vector<RegionEmbedding> VisionEncoder::query_regions(const RegionBatch& batch, const RegionTokenBank* bank,
                                                          std::vector<ClassStreamCache>* caches) const {
  if (bank && bank->tokens.cols() != config_.embed_dim)
    throw PreconditionError("token bank dimension does not match the encoder");
  std::vector<RegionEmbedding> out;
  out.reserve(batch.queries.size());
  if (caches) caches->assign(batch.queries.size(), {});
  for (std::size_t i = 0; i < batch.queries.size(); ++i) {
    const auto& q = batch.queries[i];
    Vector init = class_token_;
    if (bank) {
      if (q.region_id < 0 || q.region_id >= bank->size())
        throw PreconditionError("region id " + std::to_string(q.region_id) + " outside token bank of size " +
                                std::to_string(bank->size()));
      init += bank->tokens.row(q.region_id).transpose();
    }
    out.push_back({query_class_token(batch.streams[q.stream], q.key_patches, init, caches ? &(*caches)[i] : nullptr),
                   q.region_id});
  }
  return out;
}

void VisionEncoder::backward_regions(const RegionBatch& batch, const std::vector<ClassStreamCache>& caches,
                                     const Matrix& embedding_grad, Matrix& token_grad) const {
  if (caches.size() != batch.queries.size() || embedding_grad.rows() != static_cast<Eigen::Index>(caches.size()))
    throw PreconditionError("backward_regions: cache/gradient count mismatch");
  for (std::size_t i = 0; i < batch.queries.size(); ++i) {
    const auto& q = batch.queries[i];
    const Vector g = class_token_backward(batch.streams[q.stream], q.key_patches, caches[i],
                                          embedding_grad.row(static_cast<Eigen::Index>(i)).transpose());
    token_grad.row(q.region_id) += g.transpose();
  }
}

RegionEncoding VisionEncoder::encode_regions(const Image& image, const RegionMaskSet& masks, MaskingStrategy strategy,
                                             const RegionTokenBank* bank, std::span<const int> region_ids) const {
  if (bank) {
    if (!masks.shared_ids) throw PreconditionError("learnable tokens require codebook-consistent region ids");
    if (bank->size() != masks.num_ids)
      throw PreconditionError("token bank size " + std::to_string(bank->size()) + " does not match codebook size " +
                              std::to_string(masks.num_ids));
  }
  const auto batch = prepare_regions(image, masks, strategy, region_ids);
  RegionEncoding out;
  out.embeddings = query_regions(batch, bank);
  out.omitted = batch.omitted;
  out.patch_passes = batch.patch_passes();
  for (int id : out.omitted) spdlog::warn("region {} has an empty mask; skipped", id);
  return out;
}

// ---------------------------------------------------------------------------
// TextEncoder

TextEncoder::TextEncoder(const EncoderConfig& config, std::uint64_t seed)
    : config_(config), tokenizer_(config.text_vocab_size) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const int d = config_.embed_dim;
  token_table_ = random_matrix(rng, config_.text_vocab_size, d, 1.0);
  positions_ = random_matrix(rng, config_.text_context_len, d, 0.1);
  for (int l = 0; l < config_.depth; ++l) blocks_.push_back(init_block(rng, d, d * config_.mlp_ratio, 1.0));
  final_gain_ = Vector::Ones(d);
  final_bias_ = Vector::Zero(d);
  proj_ = random_matrix(rng, d, config_.projection_dim, 1.0 / std::sqrt(static_cast<double>(d)));
}

TextEmbedding TextEncoder::encode_text(std::string_view text) const {
  const auto tokens = tokenizer_.encode(text, config_.text_context_len);
  if (tokens.truncated)
    spdlog::warn("text truncated to {} tokens: \"{}\"", config_.text_context_len, std::string(text));
  return encode_tokens(tokens.ids);
}

TextEmbedding TextEncoder::encode_tokens(std::span<const int> ids) const {
  if (ids.empty()) throw PreconditionError("cannot encode an empty token sequence");
  if (static_cast<int>(ids.size()) > config_.text_context_len)
    throw PreconditionError("token sequence longer than the text context");
  const auto n = static_cast<Eigen::Index>(ids.size());
  Matrix x(n, config_.embed_dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= config_.text_vocab_size) throw PreconditionError("token id out of range");
    x.row(i) = token_table_.row(id) + positions_.row(i);
  }
  for (const auto& block : blocks_) block_forward(x, block, config_.num_heads, nullptr, nullptr, nullptr);
  Vector hat;
  double inv = 0;
  const Vector y = layer_norm(x.row(n - 1).transpose(), final_gain_, final_bias_, hat, inv);
  const Vector e = proj_.transpose() * y;
  return {e / e.norm()};
}

Encoders build_encoders(const EncoderConfig& config) {
  config.validate();
  return Encoders{VisionEncoder(config, config.seed), TextEncoder(config, config.seed ^ 0x9E3779B97F4A7C15ull)};
}

}  // namespace seggroup
