// SPDX-License-Identifier: Apache-2.0
#include "seggroup/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "seggroup/error.hpp"

namespace seggroup {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Path-valued keys, and whether each must name an existing directory (true) or file (false).
const std::vector<std::pair<std::string, bool>> kInputPaths = {
    {"recognition.category_file", false}, {"recognition.background_pool_file", false},
    {"recognition.templates_file", false}, {"adaption.lexicon_file", false},
    {"adaption.stopwords_file", false},    {"paths.features_dir", true},
    {"paths.captions_jsonl", false},       {"paths.images_dir", true},
    {"paths.gt_dir", true},                {"paths.codebook", false},
    {"paths.token_bank", false},
};

json::json_pointer pointer(const std::string& dotted) {
  std::string p;
  std::size_t start = 0;
  while (start <= dotted.size()) {
    const auto dot = dotted.find('.', start);
    const auto part = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("malformed key '" + dotted + "'");
    p += "/" + part;
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return json::json_pointer(p);
}

bool compatible(const json& def, const json& value) {
  if (def.is_null()) return value.is_null() || value.is_string() || value.is_number_integer();
  if (def.is_number_float()) return value.is_number();
  if (def.is_number_integer()) return value.is_number_integer();
  if (def.is_boolean()) return value.is_boolean();
  if (def.is_string()) return value.is_string();
  return false;
}

void merge_into(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError("'" + (prefix.empty() ? std::string("<root>") : prefix) + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string where = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + where + "'");
    auto& slot = base[key];
    if (slot.is_object()) {
      merge_into(slot, value, where);
    } else {
      if (!compatible(slot, value))
        throw ConfigError("config key '" + where + "' has the wrong type (" + value.type_name() + ")");
      slot = value;
    }
  }
}

template <typename T>
T get(const json& doc, const std::string& key) {
  try {
    return doc.at(pointer(key)).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

OptPath get_path(const json& doc, const std::string& key) {
  const auto& v = doc.at(pointer(key));
  if (v.is_null()) return std::nullopt;
  return fs::path(v.get<std::string>());
}

int positive(const json& doc, const std::string& key) {
  const int v = get<int>(doc, key);
  if (v < 1) throw ConfigError("config key '" + key + "' must be >= 1 (got " + std::to_string(v) + ")");
  return v;
}

template <typename F>
auto parse_enum(const json& doc, const std::string& key, F parse) {
  try {
    return parse(get<std::string>(doc, key));
  } catch (const Error& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

}  // namespace

json default_config_json() {
  const EncoderConfig enc;
  const AdaptionConfig opt;
  const SyntheticOptions syn;
  return {
      {"seed", 0},
      {"encoder",
       {{"patch_size", enc.patch_size},
        {"embed_dim", enc.embed_dim},
        {"depth", enc.depth},
        {"num_heads", enc.num_heads},
        {"mlp_ratio", enc.mlp_ratio},
        {"text_context_len", enc.text_context_len},
        {"text_vocab_size", enc.text_vocab_size},
        {"projection_dim", enc.projection_dim},
        {"position_scale", enc.position_scale},
        {"residual_scale", enc.residual_scale},
        {"seed", enc.seed}}},
      {"image", {{"shorter_side", 0}}},
      {"grouping",
       {{"M", 27}, {"metric", "cosine"}, {"mode", "codebook"}, {"seed", nullptr}, {"upsample", "bilinear"}}},
      {"recognition",
       {{"category_file", nullptr},
        {"background_pool_file", nullptr},
        {"templates_file", nullptr},
        {"strategy", "context_aware"}}},
      {"adaption",
       {{"lr", opt.lr},
        {"weight_decay", opt.weight_decay},
        {"beta1", opt.beta1},
        {"beta2", opt.beta2},
        {"eps", opt.eps},
        {"batch_size", opt.batch_size},
        {"epochs", opt.epochs},
        {"shuffle", opt.shuffle},
        {"direction", "noun_to_region"},
        {"loss_form", "log"},
        {"val_fraction", 0.2},
        {"lexicon_file", nullptr},
        {"stopwords_file", nullptr}}},
      {"paths",
       {{"features_dir", nullptr},
        {"captions_jsonl", nullptr},
        {"images_dir", nullptr},
        {"gt_dir", nullptr},
        {"out_dir", "out"},
        {"codebook", nullptr},
        {"token_bank", nullptr}}},
      {"synthesize",
       {{"num_images", syn.num_images},
        {"image_size", syn.image_size},
        {"min_objects", syn.min_objects},
        {"max_objects", syn.max_objects},
        {"noise", syn.noise},
        {"min_radius", syn.min_radius},
        {"max_radius", syn.max_radius},
        {"unmentioned", syn.unmentioned}}},
      {"bench", {{"num_regions", 8}, {"image_size", 224}, {"warmup", 3}, {"repeats", 20}}},
  };
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  const auto ptr = pointer(key);
  if (!doc.contains(ptr)) throw ConfigError("unknown config key '" + key + "'");
  auto& slot = doc.at(ptr);
  if (slot.is_object()) throw ConfigError("config key '" + key + "' is a section");
  // Path-like keys accept a bare string even if it happens to parse as JSON.
  if (slot.is_string() && !value.is_string()) value = text;
  json user = json::object();
  user[ptr] = value;
  merge_into(doc, user, "");
}

std::string RunConfig::hash() const {
  const std::string text = resolved.dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunConfig resolve_config(const json& user, const std::vector<std::string>& overrides, const fs::path& base_dir) {
  json doc = default_config_json();
  merge_into(doc, user, "");
  for (const auto& o : overrides) apply_override(doc, o);
  if (const char* env = std::getenv("SEGGROUP_SEED"); env && *env) {
    char* end = nullptr;
    const unsigned long long seed = std::strtoull(env, &end, 10);
    if (*end != '\0') throw ConfigError(std::string("SEGGROUP_SEED is not an unsigned integer: '") + env + "'");
    doc["seed"] = seed;
    if (!doc["grouping"]["seed"].is_null()) doc["grouping"]["seed"] = seed;
  }

  for (const auto& [key, is_dir] : kInputPaths) {
    auto& v = doc.at(pointer(key));
    if (v.is_null()) continue;
    if (!v.is_string()) throw ConfigError("config key '" + key + "' must be a path");
    fs::path p = v.get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    p = p.lexically_normal();
    if (is_dir ? !fs::is_directory(p) : !fs::is_regular_file(p))
      throw ConfigError("config key '" + key + "': " + (is_dir ? "directory" : "file") + " not found: " + p.string());
    v = p.string();
  }
  {
    fs::path out = doc["paths"]["out_dir"].get<std::string>();
    if (out.is_relative()) out = base_dir / out;
    doc["paths"]["out_dir"] = out.lexically_normal().string();
  }

  RunConfig c;
  c.seed = get<std::uint64_t>(doc, "seed");

  auto& e = c.encoder;
  e.patch_size = positive(doc, "encoder.patch_size");
  e.embed_dim = positive(doc, "encoder.embed_dim");
  e.depth = positive(doc, "encoder.depth");
  e.num_heads = positive(doc, "encoder.num_heads");
  e.mlp_ratio = positive(doc, "encoder.mlp_ratio");
  e.text_context_len = positive(doc, "encoder.text_context_len");
  e.text_vocab_size = positive(doc, "encoder.text_vocab_size");
  e.projection_dim = positive(doc, "encoder.projection_dim");
  e.position_scale = get<double>(doc, "encoder.position_scale");
  e.residual_scale = get<double>(doc, "encoder.residual_scale");
  e.seed = get<std::uint64_t>(doc, "encoder.seed");
  e.validate();

  c.preprocessing.patch_size = e.patch_size;
  c.preprocessing.shorter_side = get<int>(doc, "image.shorter_side");
  if (c.preprocessing.shorter_side < 0) throw ConfigError("image.shorter_side must be >= 0");

  auto& g = c.grouping;
  g.num_regions = get<int>(doc, "grouping.M");
  if (g.num_regions < 2) throw ConfigError("grouping.M must be >= 2");
  g.metric = parse_enum(doc, "grouping.metric", parse_metric);
  const auto mode = get<std::string>(doc, "grouping.mode");
  if (mode != "codebook" && mode != "per_image")
    throw ConfigError("grouping.mode must be 'codebook' or 'per_image' (got '" + mode + "')");
  g.per_image = mode == "per_image";
  g.seed = doc["grouping"]["seed"].is_null() ? c.seed : get<std::uint64_t>(doc, "grouping.seed");
  g.upsample = parse_enum(doc, "grouping.upsample", parse_upsample_mode);

  auto& r = c.recognition;
  r.category_file = get_path(doc, "recognition.category_file");
  r.background_pool_file = get_path(doc, "recognition.background_pool_file");
  r.templates_file = get_path(doc, "recognition.templates_file");
  r.strategy = parse_enum(doc, "recognition.strategy", parse_strategy);

  auto& a = c.adaption;
  a.optimizer.lr = get<double>(doc, "adaption.lr");
  a.optimizer.weight_decay = get<double>(doc, "adaption.weight_decay");
  a.optimizer.beta1 = get<double>(doc, "adaption.beta1");
  a.optimizer.beta2 = get<double>(doc, "adaption.beta2");
  a.optimizer.eps = get<double>(doc, "adaption.eps");
  a.optimizer.batch_size = get<int>(doc, "adaption.batch_size");
  a.optimizer.epochs = positive(doc, "adaption.epochs");
  a.optimizer.shuffle = get<bool>(doc, "adaption.shuffle");
  a.optimizer.seed = c.seed;
  a.optimizer.direction = parse_enum(doc, "adaption.direction", parse_direction);
  a.optimizer.loss_form = parse_enum(doc, "adaption.loss_form", parse_loss_form);
  if (!(a.optimizer.lr > 0)) throw ConfigError("adaption.lr must be > 0");
  if (a.optimizer.weight_decay < 0) throw ConfigError("adaption.weight_decay must be >= 0");
  if (a.optimizer.batch_size < 2) throw ConfigError("adaption.batch_size must be >= 2");
  if (!(a.optimizer.beta1 >= 0 && a.optimizer.beta1 < 1 && a.optimizer.beta2 >= 0 && a.optimizer.beta2 < 1))
    throw ConfigError("adaption.beta1 and adaption.beta2 must lie in [0, 1)");
  a.val_fraction = get<double>(doc, "adaption.val_fraction");
  if (!(a.val_fraction >= 0 && a.val_fraction < 1)) throw ConfigError("adaption.val_fraction must lie in [0, 1)");
  a.lexicon_file = get_path(doc, "adaption.lexicon_file");
  a.stopwords_file = get_path(doc, "adaption.stopwords_file");

  auto& p = c.paths;
  p.features_dir = get_path(doc, "paths.features_dir");
  p.captions_jsonl = get_path(doc, "paths.captions_jsonl");
  p.images_dir = get_path(doc, "paths.images_dir");
  p.gt_dir = get_path(doc, "paths.gt_dir");
  p.out_dir = get<std::string>(doc, "paths.out_dir");
  p.codebook = get_path(doc, "paths.codebook");
  p.token_bank = get_path(doc, "paths.token_bank");

  auto& s = c.synthesize;
  s.num_images = positive(doc, "synthesize.num_images");
  s.image_size = positive(doc, "synthesize.image_size");
  s.min_objects = positive(doc, "synthesize.min_objects");
  s.max_objects = positive(doc, "synthesize.max_objects");
  s.noise = get<double>(doc, "synthesize.noise");
  s.min_radius = get<double>(doc, "synthesize.min_radius");
  s.max_radius = get<double>(doc, "synthesize.max_radius");
  s.unmentioned = get<int>(doc, "synthesize.unmentioned");
  if (s.noise < 0) throw ConfigError("synthesize.noise must be >= 0");
  if (s.unmentioned < 0) throw ConfigError("synthesize.unmentioned must be >= 0");
  s.seed = c.seed;

  c.bench.num_regions = get<int>(doc, "bench.num_regions");
  if (c.bench.num_regions < 1) throw ConfigError("bench.num_regions must be >= 1");
  c.bench.image_size = positive(doc, "bench.image_size");
  c.bench.timing.warmup = get<int>(doc, "bench.warmup");
  c.bench.timing.repeats = positive(doc, "bench.repeats");
  if (c.bench.timing.warmup < 0) throw ConfigError("bench.warmup must be >= 0");

  c.resolved = std::move(doc);
  return c;
}

RunConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  json user = json::parse(in, nullptr, false, true);
  if (user.is_discarded()) throw ConfigError("config file is not valid JSON: " + path.string());
  return resolve_config(user, overrides, fs::absolute(path).parent_path());
}

}  // namespace seggroup
