// SPDX-License-Identifier: Apache-2.0
#include "seggroup/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "seggroup/recognition.hpp"
#include "seggroup/tensor_io.hpp"

namespace seggroup {

namespace {

struct Placement {
  int cls;
  double cx, cy, radius;
};

bool inside(Shape shape, double dx, double dy, double r) {
  switch (shape) {
    case Shape::circle: return dx * dx + dy * dy <= r * r;
    case Shape::square: return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    case Shape::triangle: {
      // apex up, base at dy = 0.8 r
      if (dy < -r || dy > 0.8 * r) return false;
      const double half_width = (dy + r) / 1.8 * r / r * 1.0;
      return std::abs(dx) <= half_width;
    }
    case Shape::diamond: return std::abs(dx) + std::abs(dy) <= r;
    case Shape::ellipse: return (dx * dx) / (r * r) + (dy * dy) / (0.36 * r * r) <= 1.0;
    case Shape::cross: {
      const double arm = 0.35 * r;
      return (std::abs(dx) <= arm && std::abs(dy) <= r) || (std::abs(dy) <= arm && std::abs(dx) <= r);
    }
  }
  return false;
}

std::string with_article(const std::string& noun) {
  const bool vowel = !noun.empty() && std::string("aeiou").find(noun.front()) != std::string::npos;
  return (vowel ? "an " : "a ") + noun;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); }

}  // namespace

const std::vector<ObjectClass>& synthetic_objects() {
  static const std::vector<ObjectClass> objects = {
      {"apple", {210, 30, 30}, Shape::circle},     {"lemon", {240, 220, 40}, Shape::ellipse},
      {"plum", {120, 40, 150}, Shape::diamond},    {"carrot", {240, 130, 20}, Shape::triangle},
      {"egg", {245, 245, 235}, Shape::ellipse},    {"tire", {25, 25, 25}, Shape::square},
      {"rose", {250, 110, 190}, Shape::cross},     {"mint", {60, 220, 180}, Shape::diamond},
      {"coin", {150, 150, 150}, Shape::circle},    {"brick", {140, 70, 40}, Shape::square},
      {"berry", {40, 40, 230}, Shape::circle},     {"lime", {170, 240, 60}, Shape::triangle},
  };
  return objects;
}

const std::vector<StuffClass>& synthetic_stuff() {
  static const std::vector<StuffClass> stuff = {
      {"sky", {135, 190, 235}}, {"grass", {60, 150, 60}}, {"sand", {210, 190, 140}}, {"water", {30, 70, 150}}};
  return stuff;
}

const std::vector<std::string>& synthetic_stopwords() {
  static const std::vector<std::string> words = {"a",     "an",   "the",   "and",  "of",   "in",      "on",
                                                 "with",  "there", "is",   "are",  "this", "picture", "photo",
                                                 "next",  "to",   "showing", "near", "some", "we", "see"};
  return words;
}

SyntheticSample render_sample(int index, const SyntheticOptions& options) {
  if (options.image_size < 32) throw ConfigError("synthetic image_size must be >= 32");
  if (!(options.min_radius > 0 && options.min_radius <= options.max_radius && options.max_radius < 0.5))
    throw ConfigError("synthetic radii must satisfy 0 < min_radius <= max_radius < 0.5");
  const auto& objects = synthetic_objects();
  const auto& stuff = synthetic_stuff();
  if (options.min_objects < 2 || options.max_objects < options.min_objects ||
      options.max_objects > static_cast<int>(objects.size()))
    throw ConfigError("synthetic object counts must satisfy 2 <= min_objects <= max_objects <= " +
                      std::to_string(objects.size()));

  std::mt19937_64 rng(options.seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(index) * 0xBF58476D1CE4E5B9ull +
                      1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, options.noise * 255.0);
  const int n = options.image_size;

  SyntheticSample s;
  s.stem = "img_" + std::to_string(index / 1000) + std::to_string(index / 100 % 10) + std::to_string(index / 10 % 10) +
           std::to_string(index % 10);
  s.image = Raster8{n, n, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(n) * n * 3)};
  s.gt = IdGrid(n, n, kBackgroundLabel);

  // Background: two stuff classes split by a horizon line, with stripes and noise.
  const int top = static_cast<int>(unit(rng) * stuff.size()) % static_cast<int>(stuff.size());
  int bottom = static_cast<int>(unit(rng) * (stuff.size() - 1)) % static_cast<int>(stuff.size() - 1);
  if (bottom >= top) ++bottom;
  const int horizon = static_cast<int>(n * (0.3 + 0.4 * unit(rng)));
  const double phase = unit(rng) * 6.283;
  for (int y = 0; y < n; ++y) {
    const auto& st = stuff[y < horizon ? top : bottom];
    for (int x = 0; x < n; ++x) {
      const double stripe = 8.0 * std::sin(0.35 * y + 0.2 * x + phase);
      for (int c = 0; c < 3; ++c) s.image.at(y, x, c) = to_byte(st.color[c] + stripe + noise(rng));
    }
  }

  // Objects: distinct classes, non-overlapping placements.
  std::uniform_int_distribution<int> count_dist(options.min_objects, options.max_objects);
  const int k = count_dist(rng);
  std::vector<int> classes(objects.size());
  std::iota(classes.begin(), classes.end(), 0);
  std::shuffle(classes.begin(), classes.end(), rng);
  classes.resize(static_cast<std::size_t>(k));

  std::vector<Placement> placed;
  const double r_min = options.min_radius * n, r_max = options.max_radius * n;
  for (int cls : classes) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const double r = r_min + (r_max - r_min) * unit(rng);
      const double cx = r + (n - 2 * r) * unit(rng);
      const double cy = r + (n - 2 * r) * unit(rng);
      const bool clear = std::all_of(placed.begin(), placed.end(), [&](const Placement& p) {
        return std::hypot(p.cx - cx, p.cy - cy) > p.radius + r + 2.0;
      });
      if (clear) {
        placed.push_back({cls, cx, cy, r});
        break;
      }
    }
  }
  if (placed.size() < static_cast<std::size_t>(options.min_objects)) throw DataError("could not place " + std::to_string(options.min_objects) + " objects; increase image_size");

  for (const auto& p : placed) {
    const auto& obj = objects[p.cls];
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        if (!inside(obj.shape, x + 0.5 - p.cx, y + 0.5 - p.cy, p.radius)) continue;
        for (int c = 0; c < 3; ++c) s.image.at(y, x, c) = to_byte(obj.color[c] + noise(rng));
        s.gt.at(y, x) = p.cls + 1;
      }
    }
    s.rendered.push_back(obj.name);
  }

  // Caption: a strict, non-empty subset of the rendered objects.
  std::vector<std::string> pool = s.rendered;
  std::shuffle(pool.begin(), pool.end(), rng);
  std::uniform_int_distribution<int> mention_dist(1, static_cast<int>(pool.size()) - 1);
  const int drawn = mention_dist(rng);
  const int mentioned = options.unmentioned > 0 ? std::max(1, static_cast<int>(pool.size()) - options.unmentioned) : drawn;
  pool.resize(static_cast<std::size_t>(mentioned));
  s.mentioned = pool;

  std::ostringstream caption;
  static const char* openings[] = {"a photo of ", "there is ", "this picture is showing ", "we see "};
  caption << openings[static_cast<int>(unit(rng) * 4) % 4];
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (i > 0) caption << (i + 1 == pool.size() ? " and " : ", ");
    caption << with_article(pool[i]);
  }
  caption << ".";
  s.caption = CaptionRecord{"images/" + s.stem + ".png", caption.str(), std::nullopt};
  return s;
}

std::vector<SyntheticSample> synthesize_corpus(const SyntheticOptions& options) {
  if (options.num_images < 1) throw ConfigError("num_images must be >= 1");
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<std::size_t>(options.num_images));
  for (int i = 0; i < options.num_images; ++i) out.push_back(render_sample(i, options));
  return out;
}

void write_corpus(const std::filesystem::path& dir, const std::vector<SyntheticSample>& samples) {
  const auto palette = label_palette();
  std::ostringstream captions;
  for (const auto& s : samples) {
    write_png_rgb(dir / "images" / (s.stem + ".png"), s.image);
    write_png_paletted(dir / "gt" / (s.stem + ".png"), s.gt, palette);
    captions << caption_to_json_line(s.caption) << "\n";
  }
  write_text_atomic(dir / "captions.jsonl", captions.str());

  std::ostringstream categories, pool, lexicon, stop;
  categories << "# templates:\n";
  for (const auto& t : default_templates()) categories << "# " << t << "\n";
  categories << "\n";
  for (const auto& o : synthetic_objects()) {
    categories << o.name << "\n";
    lexicon << o.name << "\n";
  }
  for (const auto& st : synthetic_stuff()) pool << st.name << "\n";
  for (const auto& w : synthetic_stopwords()) stop << w << "\n";
  write_text_atomic(dir / "categories.txt", categories.str());
  write_text_atomic(dir / "background_pool.txt", pool.str());
  write_text_atomic(dir / "lexicon.txt", lexicon.str());
  write_text_atomic(dir / "stopwords.txt", stop.str());
}

}  // namespace seggroup
