#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "bdsl/dataset.hpp"
#include "bdsl/errors.hpp"
#include "bdsl/image_io.hpp"
#include "test_util.hpp"

using namespace bdsl;
namespace fs = std::filesystem;

namespace {

// 2x1 RGB: pure red, pure blue.
const std::vector<std::uint8_t> kRgbPng{137,80,78,71,13,10,26,10,0,0,0,13,73,72,68,82,0,0,0,2,0,0,0,1,8,2,0,0,0,123,64,232,221,0,0,0,15,73,68,65,84,120,156,99,248,207,192,192,192,240,31,0,7,0,1,255,126,8,177,208,0,0,0,0,73,69,78,68,174,66,96,130};
// 8x8 grayscale JPEG, uniform level 200.
const std::vector<std::uint8_t> kGrayJpeg{255,216,255,224,0,16,74,70,73,70,0,1,1,0,0,1,0,1,0,0,255,219,0,67,0,2,1,1,1,1,1,2,1,1,1,2,2,2,2,2,4,3,2,2,2,2,5,4,4,3,4,6,5,6,6,6,5,6,6,6,7,9,8,6,7,9,7,6,6,8,11,8,9,10,10,10,10,10,6,8,11,12,11,10,12,9,10,10,10,255,192,0,11,8,0,8,0,8,1,1,17,0,255,196,0,31,0,0,1,5,1,1,1,1,1,1,0,0,0,0,0,0,0,0,1,2,3,4,5,6,7,8,9,10,11,255,196,0,181,16,0,2,1,3,3,2,4,3,5,5,4,4,0,0,1,125,1,2,3,0,4,17,5,18,33,49,65,6,19,81,97,7,34,113,20,50,129,145,161,8,35,66,177,193,21,82,209,240,36,51,98,114,130,9,10,22,23,24,25,26,37,38,39,40,41,42,52,53,54,55,56,57,58,67,68,69,70,71,72,73,74,83,84,85,86,87,88,89,90,99,100,101,102,103,104,105,106,115,116,117,118,119,120,121,122,131,132,133,134,135,136,137,138,146,147,148,149,150,151,152,153,154,162,163,164,165,166,167,168,169,170,178,179,180,181,182,183,184,185,186,194,195,196,197,198,199,200,201,202,210,211,212,213,214,215,216,217,218,225,226,227,228,229,230,231,232,233,234,241,242,243,244,245,246,247,248,249,250,255,218,0,8,1,1,0,0,63,0,253,32,175,255,217};

void write_png(const fs::path& p, std::size_t w, std::size_t h, std::uint8_t level) {
  fs::create_directories(p.parent_path());
  std::vector<std::uint8_t> px(w * h, level);
  write_file_bytes(p, encode_png_gray(w, h, px));
}

std::string sidecar(float v, bool detected = true) {
  std::vector<float> xy(42, v);
  return format_keypoints(xy, detected);
}

std::string points_json(std::size_t n) {
  std::string s = "[";
  for (std::size_t i = 0; i < n; ++i) s += std::string(i ? "," : "") + "[0.5,0.5]";
  return s + "]";
}

}  // namespace

TEST_CASE("image decoding and preprocessing") {
  const Image8 white{64, 64, 1, std::vector<std::uint8_t>(64 * 64, 255)};
  const Tensor w = preprocess_image(white);
  for (float v : w.values()) CHECK(v == 1.0f);
  const Image8 black{64, 64, 1, std::vector<std::uint8_t>(64 * 64, 0)};
  const Tensor k = preprocess_image(black);
  for (float v : k.values()) CHECK(v == 0.0f);
  CHECK(preprocess_image(black).shape() == Shape{1, 64, 64});

  const Image8 checker{2, 2, 1, {0, 255, 255, 0}};
  const Tensor t = preprocess_image(checker);
  double mean = 0;
  for (float v : t.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
    mean += v;
  }
  CHECK(std::abs(mean / t.size() - 0.5) < 0.02);

  const Image8 rgb = decode_image(kRgbPng);
  CHECK(rgb.channels == 3);
  const auto lum = to_luminance(rgb);
  CHECK(lum[0] == doctest::Approx(0.299 * 255).epsilon(1e-5));
  CHECK(lum[1] == doctest::Approx(0.114 * 255).epsilon(1e-5));

  const Image8 jpg = decode_image(kGrayJpeg);
  CHECK(jpg.width == 8);
  CHECK(jpg.channels == 1);
  for (auto p : jpg.pixels) CHECK(std::abs(int(p) - 200) <= 2);

  CHECK_THROWS_AS(decode_image(std::vector<std::uint8_t>{1, 2, 3, 4, 5, 6, 7, 8}), DecodeError);
  auto broken = kGrayJpeg;
  broken.resize(40);
  CHECK_THROWS_AS(decode_image(broken), DecodeError);
  auto broken_png = kRgbPng;
  broken_png.resize(30);
  CHECK_THROWS_AS(decode_image(broken_png), DecodeError);
}

// Reference values from an independent bilinear implementation (half-pixel
// centres, edge clamp) for a 5x3 source resized to 7x4.
TEST_CASE("bilinear resize matches reference") {
  std::vector<float> src(15);
  for (std::size_t i = 0; i < 15; ++i) src[i] = static_cast<float>((i * 7) % 11);
  const auto out = resize_bilinear(src, 5, 3, 7, 4);
  const std::vector<double> ref{0.0, 4.0, 5.857142857142857, 3.0, 8.0, 8.285714285714285, 6.0,
                                1.25, 5.25, 7.107142857142857, 4.25, 4.3392857142857135, 5.607142857142858, 7.25,
                                2.75, 4.392857142857143, 5.660714285714286, 5.75, 2.8928571428571423, 4.75, 8.75,
                                4.0, 1.7142857142857144, 2.0, 7.0, 4.142857142857142, 6.0, 10.0};
  REQUIRE(out.size() == ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-5));
}

TEST_CASE("keypoint sidecar schema") {
  KeypointRecord r = parse_keypoints(sidecar(0.5f));
  CHECK(r.detected);
  CHECK(r.values.shape() == Shape{42});
  for (float v : r.values.values()) CHECK(v == 0.5f);

  KeypointRecord none = parse_keypoints(R"({"version":1,"detected":false,"points":[]})");
  CHECK_FALSE(none.detected);
  for (float v : none.values.values()) CHECK(v == 0.0f);

  CHECK_THROWS_AS(parse_keypoints(R"({"version":1,"detected":true,"points":)" + points_json(20) + "}"), SchemaError);
  CHECK_THROWS_AS(parse_keypoints(R"({"version":2,"detected":true,"points":)" + points_json(21) + "}"), SchemaError);
  CHECK_THROWS_AS(parse_keypoints(R"({"version":1,"points":)" + points_json(21) + "}"), SchemaError);
  CHECK_THROWS_AS(parse_keypoints(R"({"version":1,"detected":true,"points":[[0.5]]})"), SchemaError);
  CHECK_THROWS_AS(parse_keypoints("not json"), SchemaError);
  CHECK_NOTHROW(parse_keypoints(R"({"version":1,"detected":true,"points":)" + points_json(21) + "}"));

  std::vector<float> xy(42);
  for (std::size_t i = 0; i < 42; ++i) xy[i] = static_cast<float>(i) / 42.0f;
  KeypointRecord back = parse_keypoints(format_keypoints(xy, true));
  for (std::size_t i = 0; i < 42; ++i) CHECK(back.values[i] == xy[i]);

  KeypointRecord clamped = parse_keypoints(sidecar(1.5f));
  for (float v : clamped.values.values()) CHECK(v == 1.0f);
}

TEST_CASE("scan_dataset") {
  test::TempDir dir("scan");
  for (int i = 0; i < 3; ++i) write_png(dir / ("a/img" + std::to_string(i) + ".png"), 4, 4, 10);
  write_png(dir / "b/x.png", 4, 4, 20);
  write_png(dir / "b/y.png", 4, 4, 30);
  test::write_text(dir / "b/y.kp.json", sidecar(0.25f));
  test::write_text(dir / "b/notes.txt", "ignored");
  test::write_text(dir / ".hidden/z.png", "ignored");

  const DatasetManifest m = scan_dataset(dir.path());
  CHECK(m.classes == std::vector<std::string>{"a", "b"});
  CHECK(m.size() == 5);
  CHECK(m.items[0].label == 0);
  CHECK(m.items[4].label == 1);
  CHECK(m.items[4].keypoints.has_value());
  CHECK(m.missing_keypoints().size() == 4);

  CHECK_THROWS_AS(load_dataset(m, true, 8, 8), DatasetError);
  const LoadedDataset d = load_dataset(m, false, 8, 8);
  CHECK(d.images.shape() == Shape{5, 1, 8, 8});
  CHECK(d.keypoints.shape() == Shape{5, 42});
  CHECK(d.detected == std::vector<std::uint8_t>{0, 0, 0, 0, 1});
  CHECK(d.images.at({3, 0, 2, 2}) == doctest::Approx(20.0 / 255));
  CHECK(d.keypoints.at({4, 7}) == 0.25f);

  fs::create_directories(dir / "c");
  CHECK_THROWS_AS(scan_dataset(dir.path()), DatasetError);
  test::TempDir empty("empty");
  CHECK_THROWS_AS(scan_dataset(empty.path()), DatasetError);
  CHECK_THROWS_AS(scan_dataset(empty / "missing"), DatasetError);
}

TEST_CASE("missing sidecar error lists the first ten offenders") {
  test::TempDir dir("missing");
  for (int i = 0; i < 12; ++i) write_png(dir / ("a/i" + std::to_string(10 + i) + ".png"), 2, 2, 0);
  try {
    load_dataset(scan_dataset(dir.path()), true, 2, 2);
    FAIL("expected DatasetError");
  } catch (const DatasetError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("i10.png") != std::string::npos);
    CHECK(msg.find("i19.png") != std::string::npos);
    CHECK(msg.find("i20.png") == std::string::npos);
  }
}

TEST_CASE("split_train_val") {
  DatasetManifest m;
  m.classes = {"a"};
  for (std::size_t i = 0; i < 11061; ++i) m.items.push_back({fs::path("a") / std::to_string(100000 + i), {}, 0});
  CHECK(default_val_count(11061) == 1102);
  auto [tr, va] = split_train_val(m, 1102, 5);
  CHECK(tr.size() == 9959);
  CHECK(va.size() == 1102);
  auto [tr2, va2] = split_train_val(m, 1102, 5);
  CHECK(va.items.size() == va2.items.size());
  bool same = true;
  for (std::size_t i = 0; i < va.size(); ++i) same &= va.items[i].image == va2.items[i].image;
  CHECK(same);
  std::set<fs::path> seen;
  for (const auto& it : tr.items) seen.insert(it.image);
  for (const auto& it : va.items) CHECK(seen.insert(it.image).second);
  CHECK(std::is_sorted(va.items.begin(), va.items.end(),
                       [](const ManifestItem& a, const ManifestItem& b) { return a.image < b.image; }));
  CHECK_THROWS_AS(split_train_val(m, 11061, 0), PreconditionError);
  CHECK_THROWS_AS(split_train_val(m, 0, 0), PreconditionError);
}

TEST_CASE("stratified split keeps every class in both halves") {
  DatasetManifest m;
  m.classes = {"a", "b", "c"};
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 10; ++i) m.items.push_back({fs::path(m.classes[c]) / std::to_string(i), {}, c});
  auto [tr, va] = split_train_val(m, 6, 1, SplitStrategy::stratified);
  CHECK(va.size() == 6);
  std::vector<int> counts(3, 0);
  for (const auto& it : va.items) ++counts[it.label];
  CHECK(counts == std::vector<int>{2, 2, 2});
}

TEST_CASE("split_root") {
  test::TempDir dir("roots");
  CHECK(*split_root(dir.path(), Split::train) == dir.path());
  CHECK_FALSE(split_root(dir.path(), Split::test).has_value());
  fs::create_directories(dir / "train");
  fs::create_directories(dir / "test");
  CHECK(*split_root(dir.path(), Split::train) == dir / "train");
  CHECK(*split_root(dir.path(), Split::test) == dir / "test");
}

TEST_CASE("dataset archive and epoch order") {
  LoadedDataset d;
  d.classes = {"x", "y"};
  d.images = test::random_tensor<float>({3, 1, 4, 4}, 1, 0, 1);
  d.keypoints = test::random_tensor<float>({3, 42}, 2, 0, 1);
  d.detected = {1, 0, 1};
  d.labels = {0, 1, 1};
  const LoadedDataset back = dataset_from_archive(dataset_to_archive(d), d.classes);
  CHECK(back.images.identical(d.images));
  CHECK(back.keypoints.identical(d.keypoints));
  CHECK(back.labels == d.labels);
  CHECK(back.detected == d.detected);

  auto o1 = epoch_order(100, 3, 0), o2 = epoch_order(100, 3, 0), o3 = epoch_order(100, 3, 1);
  CHECK(o1 == o2);
  CHECK(o1 != o3);
  std::sort(o3.begin(), o3.end());
  std::vector<std::size_t> iota(100);
  std::iota(iota.begin(), iota.end(), 0);
  CHECK(o3 == iota);
}
