// SPDX-License-Identifier: Apache-2.0
#include "seggroup/recognition.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "seggroup/png_io.hpp"
#include "seggroup/tensor_io.hpp"

namespace seggroup {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::vector<std::string> default_templates() {
  return {"a photo of a {}.", "a photo of the {}.", "an image of a {}."};
}

void check_template(std::string_view tmpl) {
  std::size_t count = 0;
  for (auto pos = tmpl.find("{}"); pos != std::string_view::npos; pos = tmpl.find("{}", pos + 2)) ++count;
  if (count != 1)
    throw ConfigError("template \"" + std::string(tmpl) + "\" must contain exactly one {} placeholder");
}

std::string fill_template(std::string_view tmpl, std::string_view name) {
  check_template(tmpl);
  const auto pos = tmpl.find("{}");
  std::string out(tmpl.substr(0, pos));
  out += name;
  out += tmpl.substr(pos + 2);
  return out;
}

void CategorySet::validate() const {
  if (names.empty()) throw ConfigError("category set has no names");
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty()) throw ConfigError("empty category name");
    if (!seen.insert(n).second) throw ConfigError("duplicate category name '" + n + "'");
  }
  if (templates.empty()) throw ConfigError("category set has no templates");
  for (const auto& t : templates) check_template(t);
}

CategoryFile parse_category_text(std::string_view text) {
  CategoryFile file;
  std::istringstream in{std::string(text)};
  std::string line;
  bool in_templates = false;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty()) {
      in_templates = false;
      continue;
    }
    if (t.front() == '#') {
      const auto body = trim(std::string_view(t).substr(1));
      if (body == "templates:") {
        in_templates = true;
      } else if (in_templates) {
        check_template(body);
        file.templates.push_back(body);
      }
      continue;
    }
    in_templates = false;
    file.names.push_back(t);
  }
  return file;
}

CategoryFile load_category_file(const std::filesystem::path& path) { return parse_category_text(read_text(path)); }

std::vector<std::string> load_word_list(const std::filesystem::path& path) {
  std::vector<std::string> words;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    auto t = trim(line);
    if (!t.empty() && t.front() != '#') words.push_back(std::move(t));
  }
  return words;
}

Matrix embed_prompts(std::span<const std::string> names, std::span<const std::string> templates,
                     const TextEncoder& text_encoder) {
  if (templates.empty()) throw ConfigError("no prompt templates");
  for (const auto& t : templates) check_template(t);
  Matrix out(static_cast<Eigen::Index>(names.size()), text_encoder.config().projection_dim);
  for (std::size_t i = 0; i < names.size(); ++i) {
    Vector sum = Vector::Zero(out.cols());
    for (const auto& t : templates) sum += text_encoder.encode_text(fill_template(t, names[i])).vector;
    sum /= static_cast<double>(templates.size());
    out.row(static_cast<Eigen::Index>(i)) = (sum / sum.norm()).transpose();
  }
  return out;
}

std::vector<TextEmbedding> embed_categories(const CategorySet& categories, const TextEncoder& text_encoder) {
  categories.validate();
  const Matrix m = embed_prompts(categories.names, categories.templates, text_encoder);
  std::vector<TextEmbedding> out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back({m.row(r).transpose()});
  return out;
}

int Vocabulary::label_for(int index) const {
  if (index < 0 || index >= static_cast<int>(entries.size())) throw PreconditionError("vocabulary index out of range");
  if (index >= num_foreground) return kBackgroundLabel;
  return has_background ? index + 1 : index;
}

std::map<int, std::string> Vocabulary::legend() const {
  std::map<int, std::string> legend;
  if (has_background) legend[kBackgroundLabel] = "background";
  for (int i = 0; i < num_foreground; ++i) legend[label_for(i)] = entries[i];
  legend[kIgnoreLabel] = "ignore";
  return legend;
}

Vocabulary make_vocabulary(const CategorySet& categories) {
  Vocabulary v;
  v.entries = categories.names;
  v.num_foreground = static_cast<int>(categories.names.size());
  if (v.num_foreground + 1 >= kIgnoreLabel) throw ConfigError("too many categories for 8-bit label maps");
  std::set<std::string> seen(categories.names.begin(), categories.names.end());
  v.has_background = !categories.background_pool.empty();
  for (const auto& b : categories.background_pool)
    if (seen.insert(b).second) v.entries.push_back(b);
  return v;
}

std::vector<RegionLabel> classify_regions(std::span<const RegionEmbedding> regions,
                                          std::span<const TextEmbedding> categories) {
  if (regions.empty() || categories.empty()) throw PreconditionError("classify_regions needs non-empty inputs");
  const auto dim = categories.front().vector.size();
  std::vector<Vector> unit;
  for (const auto& c : categories) {
    if (c.vector.size() != dim) throw PreconditionError("category embeddings differ in dimension");
    const double n = c.vector.norm();
    if (n == 0) throw PreconditionError("zero-norm category embedding");
    unit.push_back(c.vector / n);
  }
  std::vector<RegionLabel> out;
  for (const auto& r : regions) {
    if (r.vector.size() != dim)
      throw PreconditionError("region embedding dimension " + std::to_string(r.vector.size()) +
                              " does not match category dimension " + std::to_string(dim));
    const double n = r.vector.norm();
    if (n == 0) throw PreconditionError("zero-norm region embedding");
    const Vector ru = r.vector / n;
    RegionLabel best{r.region_id, 0, ru.dot(unit[0])};
    for (std::size_t c = 1; c < unit.size(); ++c) {
      const double s = ru.dot(unit[c]);
      if (s > best.similarity) best = {r.region_id, static_cast<int>(c), s};
    }
    out.push_back(best);
  }
  return out;
}

LabelMap assemble_segmentation(const RegionMaskSet& masks, std::span<const RegionLabel> region_labels,
                               const CategorySet& categories, bool missing_as_ignore) {
  const auto vocab = make_vocabulary(categories);
  std::map<int, int> label_of_region;
  for (const auto& rl : region_labels) label_of_region[rl.region_id] = vocab.label_for(rl.category);

  LabelMap out;
  out.legend = vocab.legend();
  out.labels = IdGrid(masks.high_res.height, masks.high_res.width);
  for (std::size_t i = 0; i < masks.high_res.size(); ++i) {
    const int id = masks.high_res.cells[i];
    auto it = label_of_region.find(id);
    if (it == label_of_region.end()) {
      if (!missing_as_ignore) throw PreconditionError("region " + std::to_string(id) + " has no label");
      out.labels.cells[i] = kIgnoreLabel;
      continue;
    }
    out.labels.cells[i] = it->second;
  }
  return out;
}

void save_label_map(const std::filesystem::path& png_path, const std::filesystem::path& legend_path,
                    const LabelMap& map) {
  write_png_paletted(png_path, map.labels, label_palette());
  nlohmann::json legend = nlohmann::json::object();
  for (const auto& [id, name] : map.legend) legend[std::to_string(id)] = name;
  write_text_atomic(legend_path, legend.dump(2) + "\n");
}

}  // namespace seggroup
