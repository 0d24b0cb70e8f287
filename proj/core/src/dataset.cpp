#include "bdsl/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "bdsl/image_io.hpp"
#include "bdsl/model.hpp"

namespace bdsl {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::vector<fs::path> DatasetManifest::missing_keypoints() const {
  std::vector<fs::path> out;
  for (const auto& it : items)
    if (!it.keypoints) out.push_back(it.image);
  return out;
}

// ---------------------------------------------------------------------------
// Sidecars

KeypointRecord parse_keypoints(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("sidecar is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw SchemaError("sidecar must be a JSON object");
  if (!j.contains("version") || !j["version"].is_number_integer())
    throw SchemaError("sidecar lacks integer 'version'");
  if (j["version"].get<int>() != kSidecarVersion)
    throw SchemaError("unsupported sidecar version " + j["version"].dump());
  if (!j.contains("detected") || !j["detected"].is_boolean())
    throw SchemaError("sidecar lacks boolean 'detected'");

  KeypointRecord rec;
  rec.values = Tensor::zeros({kKeypointDim});
  rec.detected = j["detected"].get<bool>();
  if (!rec.detected) return rec;

  if (!j.contains("points") || !j["points"].is_array())
    throw SchemaError("detected sidecar lacks 'points' array");
  const auto& pts = j["points"];
  if (pts.size() != kKeypointCount) {
    throw SchemaError("sidecar has " + std::to_string(pts.size()) + " points, expected " +
                      std::to_string(kKeypointCount));
  }
  for (std::size_t i = 0; i < kKeypointCount; ++i) {
    const auto& p = pts[i];
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
      throw SchemaError("point " + std::to_string(i) + " is not an [x, y] pair");
    for (std::size_t k = 0; k < 2; ++k) {
      const double v = p[k].get<double>();
      if (!std::isfinite(v)) throw SchemaError("non-finite coordinate in point " + std::to_string(i));
      rec.values[2 * i + k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return rec;
}

KeypointRecord load_keypoints(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open sidecar " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_keypoints(ss.str());
  } catch (const SchemaError& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

std::string format_keypoints(std::span<const float> xy, bool detected) {
  json j;
  j["version"] = kSidecarVersion;
  j["detected"] = detected;
  json pts = json::array();
  if (detected) {
    if (xy.size() != kKeypointDim) throw SizeError("format_keypoints expects 42 values");
    for (std::size_t i = 0; i < kKeypointCount; ++i) pts.push_back({xy[2 * i], xy[2 * i + 1]});
  }
  j["points"] = std::move(pts);
  return j.dump();
}

// ---------------------------------------------------------------------------
// Scanning and splitting

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

bool hidden(const fs::path& p) {
  const auto name = p.filename().string();
  return !name.empty() && name[0] == '.';
}

}  // namespace

DatasetManifest scan_dataset(const fs::path& root, Split split) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw DatasetError("dataset root " + root.string() + " is not a directory");
  DatasetManifest m;
  m.root = root;
  m.split = split;
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && !hidden(entry.path())) class_dirs.push_back(entry.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw DatasetError("no class folders under " + root.string());

  for (std::size_t id = 0; id < class_dirs.size(); ++id) {
    const auto& dir = class_dirs[id];
    m.classes.push_back(dir.filename().string());
    std::vector<fs::path> images;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file() && !hidden(entry.path()) && is_image_file(entry.path()))
        images.push_back(entry.path());
    if (images.empty()) throw DatasetError("class folder " + dir.string() + " has no images");
    for (auto& img : images) {
      ManifestItem item;
      item.label = static_cast<int>(id);
      fs::path sidecar = img.parent_path() / (img.stem().string() + kSidecarSuffix);
      if (fs::is_regular_file(sidecar, ec)) item.keypoints = sidecar;
      item.image = std::move(img);
      m.items.push_back(std::move(item));
    }
  }
  std::sort(m.items.begin(), m.items.end(),
            [](const ManifestItem& a, const ManifestItem& b) { return a.image < b.image; });
  return m;
}

namespace {

void seeded_shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(v[i - 1], v[pick(rng)]);
  }
}

}  // namespace

std::optional<std::filesystem::path> split_root(const std::filesystem::path& root, Split split) {
  const auto sub = root / to_string(split);
  if (std::filesystem::is_directory(sub)) return sub;
  if (split == Split::train) return root;
  return std::nullopt;
}

std::pair<DatasetManifest, DatasetManifest> split_train_val(const DatasetManifest& manifest,
                                                            std::size_t val_count,
                                                            std::uint64_t seed,
                                                            SplitStrategy strategy) {
  const std::size_t n = manifest.size();
  if (val_count == 0 || val_count >= n) {
    throw PreconditionError("validation count " + std::to_string(val_count) +
                            " must lie strictly between 0 and " + std::to_string(n));
  }
  std::mt19937_64 rng(seed);
  std::vector<char> in_val(n, 0);
  if (strategy == SplitStrategy::uniform) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    seeded_shuffle(order, rng);
    for (std::size_t i = 0; i < val_count; ++i) in_val[order[i]] = 1;
  } else {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < n; ++i) by_class[manifest.items[i].label].push_back(i);
    // Largest-remainder apportionment of val_count across classes.
    struct Quota {
      int label;
      std::size_t take;
      double remainder;
    };
    std::vector<Quota> quotas;
    std::size_t assigned = 0;
    for (const auto& [label, idx] : by_class) {
      const double exact = static_cast<double>(val_count) * static_cast<double>(idx.size()) /
                           static_cast<double>(n);
      const auto base = static_cast<std::size_t>(std::floor(exact));
      quotas.push_back({label, base, exact - static_cast<double>(base)});
      assigned += base;
    }
    std::vector<std::size_t> rank(quotas.size());
    std::iota(rank.begin(), rank.end(), 0);
    std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
      return quotas[a].remainder > quotas[b].remainder;
    });
    for (std::size_t k = 0; assigned < val_count; k = (k + 1) % rank.size()) {
      auto& q = quotas[rank[k]];
      if (q.take < by_class[q.label].size()) {
        ++q.take;
        ++assigned;
      }
    }
    for (const auto& q : quotas) {
      auto idx = by_class[q.label];
      seeded_shuffle(idx, rng);
      for (std::size_t i = 0; i < q.take; ++i) in_val[idx[i]] = 1;
    }
  }

  DatasetManifest train = manifest, val = manifest;
  train.items.clear();
  val.items.clear();
  train.split = Split::train;
  val.split = Split::val;
  for (std::size_t i = 0; i < n; ++i) (in_val[i] ? val : train).items.push_back(manifest.items[i]);
  return {std::move(train), std::move(val)};
}

std::size_t default_val_count(std::size_t items) {
  const auto v = static_cast<std::size_t>(
      std::llround(static_cast<double>(items) * 1102.0 / 11061.0));
  return std::clamp<std::size_t>(v, 1, items > 1 ? items - 1 : 1);
}

// ---------------------------------------------------------------------------
// Loading

Sample LoadedDataset::sample(std::size_t i) const {
  if (i >= size()) throw ShapeError("sample index out of range");
  const std::size_t plane = images.size() / size();
  Sample s;
  s.image = Tensor({images.dim(1), images.dim(2), images.dim(3)},
                   std::vector<float>(images.data() + i * plane, images.data() + (i + 1) * plane));
  s.keypoints = Tensor({kKeypointDim}, std::vector<float>(keypoints.data() + i * kKeypointDim,
                                                          keypoints.data() + (i + 1) * kKeypointDim));
  s.detected = detected[i] != 0;
  s.label = labels[i];
  return s;
}

void LoadedDataset::gather(std::span<const std::size_t> rows, Tensor& images_out,
                           Tensor& keypoints_out, std::vector<int>& labels_out) const {
  const std::size_t plane = images.size() / size();
  const std::size_t b = rows.size();
  images_out = Tensor({b, images.dim(1), images.dim(2), images.dim(3)});
  keypoints_out = Tensor({b, kKeypointDim});
  labels_out.resize(b);
  for (std::size_t r = 0; r < b; ++r) {
    const std::size_t i = rows[r];
    std::copy_n(images.data() + i * plane, plane, images_out.data() + r * plane);
    std::copy_n(keypoints.data() + i * kKeypointDim, kKeypointDim,
                keypoints_out.data() + r * kKeypointDim);
    labels_out[r] = labels[i];
  }
}

LoadedDataset load_dataset(const DatasetManifest& manifest, bool require_keypoints,
                           std::size_t height, std::size_t width) {
  if (manifest.size() == 0) throw DatasetError("manifest has no items");
  if (require_keypoints) {
    const auto missing = manifest.missing_keypoints();
    if (!missing.empty()) {
      std::ostringstream os;
      os << missing.size() << " item(s) lack keypoint sidecars; first offenders:";
      for (std::size_t i = 0; i < std::min<std::size_t>(10, missing.size()); ++i)
        os << "\n  " << missing[i].string();
      throw DatasetError(os.str());
    }
  }
  const std::size_t n = manifest.size();
  const std::size_t plane = height * width;
  LoadedDataset d;
  d.classes = manifest.classes;
  d.images = Tensor({n, 1, height, width});
  d.keypoints = Tensor({n, kKeypointDim});
  d.detected.assign(n, 0);
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& item = manifest.items[i];
    const Tensor img = load_image(item.image, height, width);
    std::copy_n(img.data(), plane, d.images.data() + i * plane);
    if (item.keypoints) {
      const auto kp = load_keypoints(*item.keypoints);
      std::copy_n(kp.values.data(), kKeypointDim, d.keypoints.data() + i * kKeypointDim);
      d.detected[i] = kp.detected ? 1 : 0;
    }
    d.labels[i] = item.label;
  }
  return d;
}

Archive dataset_to_archive(const LoadedDataset& data) {
  Archive a;
  a.emplace("images", data.images);
  a.emplace("keypoints", data.keypoints);
  Tensor labels({data.size()}), detected({data.size()});
  for (std::size_t i = 0; i < data.size(); ++i) {
    labels[i] = static_cast<float>(data.labels[i]);
    detected[i] = data.detected[i] ? 1.0f : 0.0f;
  }
  a.emplace("labels", std::move(labels));
  a.emplace("detected", std::move(detected));
  return a;
}

LoadedDataset dataset_from_archive(const Archive& archive, std::vector<std::string> classes) {
  LoadedDataset d;
  d.classes = std::move(classes);
  d.images = archive_f32(archive, "images");
  d.keypoints = archive_f32(archive, "keypoints");
  const Tensor& labels = archive_f32(archive, "labels");
  const Tensor& detected = archive_f32(archive, "detected");
  const std::size_t n = labels.size();
  if (d.images.ndim() != 4 || d.images.dim(0) != n || d.keypoints.shape() != Shape{n, kKeypointDim} ||
      detected.size() != n)
    throw FormatError("dataset archive tensors disagree on item count");
  for (std::size_t i = 0; i < n; ++i) {
    const float l = labels[i];
    if (l < 0 || l != std::floor(l) || static_cast<std::size_t>(l) >= d.classes.size())
      throw FormatError("dataset archive has an invalid label");
    d.labels.push_back(static_cast<int>(l));
    d.detected.push_back(detected[i] != 0.0f ? 1 : 0);
  }
  return d;
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(epoch) + 1)));
  seeded_shuffle(order, rng);
  return order;
}

}  // namespace bdsl
