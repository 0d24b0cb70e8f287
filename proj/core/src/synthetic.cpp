#include "bdsl/synthetic.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

#include "bdsl/archive.hpp"
#include "bdsl/dataset.hpp"
#include "bdsl/image_io.hpp"

namespace bdsl {

namespace fs = std::filesystem;
using nlohmann::json;

void SyntheticConfig::validate() const {
  if (classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  if (2 * ambiguous_pairs > classes)
    throw ConfigError("ambiguous pairs (" + std::to_string(ambiguous_pairs) +
                      ") need 2P <= K (K = " + std::to_string(classes) + ")");
  if (train_count < classes || test_count < classes)
    throw ConfigError("train and test counts must each be at least the class count");
  if (!(noise >= 0) || !std::isfinite(noise)) throw ConfigError("noise must be finite and >= 0");
  if (image_size < 8) throw ConfigError("image_size must be at least 8");
}

std::string SyntheticConfig::to_json() const {
  json j;
  j["classes"] = classes;
  j["ambiguous_pairs"] = ambiguous_pairs;
  j["train"] = train_count;
  j["test"] = test_count;
  j["noise"] = noise;
  j["seed"] = seed;
  j["image_size"] = image_size;
  return j.dump();
}

SyntheticConfig SyntheticConfig::from_json(const std::string& text) {
  SyntheticConfig c;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ConfigError("synthetic config must be a JSON object");
    static const std::set<std::string> known = {"classes", "ambiguous_pairs", "train", "test",
                                                "noise",   "seed",            "image_size"};
    for (const auto& [k, v] : j.items())
      if (!known.count(k)) throw ConfigError("unknown synthetic config key '" + k + "'");
    c.classes = j.value("classes", c.classes);
    c.ambiguous_pairs = j.value("ambiguous_pairs", c.ambiguous_pairs);
    c.train_count = j.value("train", c.train_count);
    c.test_count = j.value("test", c.test_count);
    c.noise = j.value("noise", c.noise);
    c.seed = j.value("seed", c.seed);
    c.image_size = j.value("image_size", c.image_size);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid synthetic config: ") + e.what());
  }
  return c;
}

const std::array<std::pair<int, int>, 20>& hand_bones() {
  static const std::array<std::pair<int, int>, 20> bones = {{
      {0, 1}, {1, 2}, {2, 3}, {3, 4},         // thumb
      {0, 5}, {5, 6}, {6, 7}, {7, 8},         // index
      {0, 9}, {9, 10}, {10, 11}, {11, 12},    // middle
      {0, 13}, {13, 14}, {14, 15}, {15, 16},  // ring
      {0, 17}, {17, 18}, {18, 19}, {19, 20},  // little
  }};
  return bones;
}

std::vector<KeypointTemplate> class_templates(const SyntheticConfig& config) {
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> coord(0.1, 0.9);
  std::vector<KeypointTemplate> out(config.classes);
  for (auto& t : out)
    for (auto& v : t) v = static_cast<float>(coord(rng));
  return out;
}

std::size_t image_template_class(const SyntheticConfig& config, std::size_t cls) {
  if (cls < 2 * config.ambiguous_pairs) return cls - cls % 2;
  return cls;
}

std::vector<std::uint8_t> render_skeleton(std::span<const float> xy, std::size_t size) {
  if (xy.size() != kKeypointDim) throw SizeError("render_skeleton expects 42 coordinates");
  constexpr double half_width = 1.0;
  std::vector<double> coverage(size * size, 0.0);
  const double scale = static_cast<double>(size);
  for (const auto& [a, b] : hand_bones()) {
    const double ax = xy[2 * a] * scale, ay = xy[2 * a + 1] * scale;
    const double bx = xy[2 * b] * scale, by = xy[2 * b + 1] * scale;
    const double dx = bx - ax, dy = by - ay;
    const double len2 = dx * dx + dy * dy;
    const double reach = half_width + 1.0;
    const auto x_lo = static_cast<std::ptrdiff_t>(std::floor(std::min(ax, bx) - reach));
    const auto x_hi = static_cast<std::ptrdiff_t>(std::ceil(std::max(ax, bx) + reach));
    const auto y_lo = static_cast<std::ptrdiff_t>(std::floor(std::min(ay, by) - reach));
    const auto y_hi = static_cast<std::ptrdiff_t>(std::ceil(std::max(ay, by) + reach));
    const auto limit = static_cast<std::ptrdiff_t>(size) - 1;
    for (auto py = std::max<std::ptrdiff_t>(0, y_lo); py <= std::min(limit, y_hi); ++py) {
      for (auto px = std::max<std::ptrdiff_t>(0, x_lo); px <= std::min(limit, x_hi); ++px) {
        const double cx = static_cast<double>(px) + 0.5, cy = static_cast<double>(py) + 0.5;
        double t = len2 > 0 ? ((cx - ax) * dx + (cy - ay) * dy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double ex = ax + t * dx - cx, ey = ay + t * dy - cy;
        const double d = std::sqrt(ex * ex + ey * ey);
        const double c = std::clamp(half_width + 0.5 - d, 0.0, 1.0);
        auto& cell = coverage[static_cast<std::size_t>(py) * size + static_cast<std::size_t>(px)];
        cell = std::max(cell, c);
      }
    }
  }
  std::vector<std::uint8_t> out(size * size);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>(std::lround(255.0 * coverage[i]));
  return out;
}

double image_only_bayes_ceiling(const SyntheticConfig& config) {
  const double k = static_cast<double>(config.classes);
  const double paired = 2.0 * static_cast<double>(config.ambiguous_pairs);
  return (k - paired) / k + (paired / k) * 0.5;
}

std::string synthetic_class_name(std::size_t cls) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "class_%02zu", cls);
  return buf;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

void write_split(const SyntheticConfig& config, const std::vector<KeypointTemplate>& templates,
                 const fs::path& dir, std::size_t count, std::mt19937_64& rng) {
  std::normal_distribution<double> jitter(0.0, config.noise);
  for (std::size_t cls = 0; cls < config.classes; ++cls) {
    const fs::path class_dir = dir / synthetic_class_name(cls);
    fs::create_directories(class_dir);
    const std::size_t per_class = count / config.classes + (cls < count % config.classes ? 1 : 0);
    const auto& own = templates[cls];
    const auto& shown = templates[image_template_class(config, cls)];
    for (std::size_t i = 0; i < per_class; ++i) {
      // One noise draw moves both the rendered hand and the reported keypoints.
      std::array<float, kKeypointDim> image_xy{}, keypoint_xy{};
      for (std::size_t k = 0; k < kKeypointDim; ++k) {
        const double n = config.noise > 0 ? jitter(rng) : 0.0;
        image_xy[k] = static_cast<float>(std::clamp(shown[k] + n, 0.0, 1.0));
        keypoint_xy[k] = static_cast<float>(std::clamp(own[k] + n, 0.0, 1.0));
      }
      char stem[64];
      std::snprintf(stem, sizeof stem, "%s_%05zu", synthetic_class_name(cls).c_str(), i);
      const auto pixels = render_skeleton(image_xy, config.image_size);
      write_file_bytes(class_dir / (std::string(stem) + ".png"),
                       encode_png_gray(config.image_size, config.image_size, pixels));
      write_text(class_dir / (std::string(stem) + kSidecarSuffix),
                 format_keypoints(keypoint_xy, true));
    }
  }
}

}  // namespace

void generate_synthetic(const SyntheticConfig& config, const fs::path& out_root) {
  config.validate();
  fs::create_directories(out_root);
  const auto templates = class_templates(config);
  // Separate streams per split so the test set does not depend on train_count.
  std::mt19937_64 train_rng(config.seed ^ 0x747261696eull);
  std::mt19937_64 test_rng(config.seed ^ 0x74657374ull);
  write_split(config, templates, out_root / "train", config.train_count, train_rng);
  write_split(config, templates, out_root / "test", config.test_count, test_rng);

  json meta = json::parse(config.to_json());
  json pairs = json::array();
  for (std::size_t p = 0; p < config.ambiguous_pairs; ++p)
    pairs.push_back({synthetic_class_name(2 * p), synthetic_class_name(2 * p + 1)});
  meta["pairs"] = std::move(pairs);
  meta["image_only_bayes_ceiling"] = image_only_bayes_ceiling(config);
  write_text(out_root / "synth.json", meta.dump(2) + "\n");
}

}  // namespace bdsl
