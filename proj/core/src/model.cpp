#include "bdsl/model.hpp"

#include <json.hpp>

#include <cmath>
#include <algorithm>
#include <cstring>
#include <random>
#include <set>

#include "bdsl/ops.hpp"

namespace bdsl {

using nlohmann::json;

std::string to_string(Topology t) {
  return t == Topology::concatenated ? "concatenated" : "image_only";
}

Topology topology_from_string(const std::string& s) {
  if (s == "concatenated" || s == "concat") return Topology::concatenated;
  if (s == "image_only" || s == "image-only") return Topology::image_only;
  throw ConfigError("unknown topology '" + s + "'");
}

std::string to_string(BnOrder o) {
  return o == BnOrder::act_then_bn ? "act_then_bn" : "bn_then_act";
}

BnOrder bn_order_from_string(const std::string& s) {
  if (s == "act_then_bn") return BnOrder::act_then_bn;
  if (s == "bn_then_act") return BnOrder::bn_then_act;
  throw ConfigError("unknown bn_order '" + s + "'");
}

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  if (conv_channels.size() != 10)
    throw ConfigError("image branch needs exactly 10 conv widths, got " +
                      std::to_string(conv_channels.size()));
  std::set<std::size_t> pools(pool_after.begin(), pool_after.end());
  if (pools.size() != 4 || pool_after.size() != 4)
    throw ConfigError("image branch needs exactly 4 distinct pool positions");
  if (*pools.rbegin() >= conv_channels.size()) throw ConfigError("pool position past last conv");
  for (auto c : conv_channels)
    if (c == 0) throw ConfigError("conv widths must be positive");
  if (image_channels == 0) throw ConfigError("image_channels must be positive");
  if (kernel_size % 2 == 0) throw ConfigError("kernel_size must be odd for same padding");
  if (input_height % 16 != 0 || input_width % 16 != 0 || input_height == 0 || input_width == 0)
    throw ConfigError("input size must be a positive multiple of 16 for four 2x2 pools");
  if (image_fc_widths.size() != 2 || pose_fc_widths.size() != 2 || head_widths.size() != 2)
    throw ConfigError("image/pose branches and head each take exactly 2 hidden widths");
  for (const auto* v : {&image_fc_widths, &pose_fc_widths, &head_widths})
    for (auto w : *v)
      if (w == 0) throw ConfigError("dense widths must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (pose_input_dim != kKeypointDim)
    throw ConfigError("pose_input_dim must be 2 x 21 = 42");
  if (!(bn_epsilon > 0)) throw ConfigError("bn_epsilon must be positive");
  if (!(bn_momentum > 0 && bn_momentum < 1)) throw ConfigError("bn_momentum must lie in (0,1)");
}

std::size_t ModelConfig::flatten_width() const {
  return conv_channels.back() * (input_height / 16) * (input_width / 16);
}

std::string ModelConfig::to_json() const {
  json j;
  j["input_hw"] = {input_height, input_width};
  j["image_channels"] = image_channels;
  j["conv_channels"] = conv_channels;
  j["pool_after"] = pool_after;
  j["kernel_size"] = kernel_size;
  j["image_fc_widths"] = image_fc_widths;
  j["pose_input_dim"] = pose_input_dim;
  j["pose_fc_widths"] = pose_fc_widths;
  j["head_widths"] = head_widths;
  j["num_classes"] = num_classes;
  j["bn_order"] = to_string(bn_order);
  j["bn_epsilon"] = bn_epsilon;
  j["bn_momentum"] = bn_momentum;
  j["seed"] = seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig c;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    static const std::set<std::string> known = {
        "input_hw",       "image_channels", "conv_channels", "pool_after",  "kernel_size",
        "image_fc_widths", "pose_input_dim", "pose_fc_widths", "head_widths", "num_classes",
        "bn_order",       "bn_epsilon",     "bn_momentum",   "seed"};
    for (const auto& [k, v] : j.items())
      if (!known.count(k)) throw ConfigError("unknown model config key '" + k + "'");
    if (j.contains("input_hw")) {
      const auto hw = j.at("input_hw").get<std::vector<std::size_t>>();
      if (hw.size() != 2) throw ConfigError("input_hw must have two entries");
      c.input_height = hw[0];
      c.input_width = hw[1];
    }
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("image_channels", c.image_channels);
    get("conv_channels", c.conv_channels);
    get("pool_after", c.pool_after);
    get("kernel_size", c.kernel_size);
    get("image_fc_widths", c.image_fc_widths);
    get("pose_input_dim", c.pose_input_dim);
    get("pose_fc_widths", c.pose_fc_widths);
    get("head_widths", c.head_widths);
    get("num_classes", c.num_classes);
    get("bn_epsilon", c.bn_epsilon);
    get("bn_momentum", c.bn_momentum);
    get("seed", c.seed);
    if (j.contains("bn_order")) c.bn_order = bn_order_from_string(j.at("bn_order").get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid model config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Network

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

enum class InitKind { he_uniform, glorot_uniform };

// Each tensor draws from its own stream keyed by (seed, name), so the shared
// image branch is identical across topologies.
void init_uniform(Parameter& p, std::uint64_t seed, std::size_t fan_in, std::size_t fan_out,
                  InitKind kind, double gain = 1.0) {
  const double limit = gain * (kind == InitKind::he_uniform
                                   ? std::sqrt(6.0 / static_cast<double>(fan_in))
                                   : std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
  std::mt19937_64 rng(seed ^ fnv1a(p.name));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : p.value.values()) v = static_cast<float>(dist(rng));
}

}  // namespace

Network::Network(ModelConfig config, Topology topology)
    : config_(std::move(config)), topology_(topology) {
  config_.validate();
  const auto& c = config_;
  std::size_t in_ch = c.image_channels;
  for (std::size_t i = 0; i < c.conv_channels.size(); ++i) {
    const std::string idx = std::to_string(i);
    ConvBlock block;
    block.conv = nn::make_conv2d<float>("image.conv" + idx, in_ch, c.conv_channels[i], c.kernel_size);
    block.bn = nn::make_batchnorm<float>("image.bn" + idx, c.conv_channels[i], c.bn_epsilon,
                                         c.bn_momentum);
    block.pool_after =
        std::find(c.pool_after.begin(), c.pool_after.end(), i) != c.pool_after.end();
    conv_blocks_.push_back(std::move(block));
    in_ch = c.conv_channels[i];
  }
  std::size_t width = c.flatten_width();
  for (std::size_t i = 0; i < c.image_fc_widths.size(); ++i) {
    image_fc_.push_back(nn::make_dense<float>("image.fc" + std::to_string(i), width,
                                              c.image_fc_widths[i]));
    width = c.image_fc_widths[i];
  }
  std::size_t fused = width;
  if (topology_ == Topology::concatenated) {
    std::size_t pw = c.pose_input_dim;
    for (std::size_t i = 0; i < c.pose_fc_widths.size(); ++i) {
      pose_fc_.push_back(
          nn::make_dense<float>("pose.fc" + std::to_string(i), pw, c.pose_fc_widths[i]));
      pw = c.pose_fc_widths[i];
    }
    fused += pw;
  }
  std::size_t hw = fused;
  for (std::size_t i = 0; i < c.head_widths.size(); ++i) {
    head_.push_back(nn::make_dense<float>("head.fc" + std::to_string(i), hw, c.head_widths[i]));
    hw = c.head_widths[i];
  }
  head_.push_back(nn::make_dense<float>("head.fc" + std::to_string(c.head_widths.size()), hw,
                                        c.num_classes));
  initialise();
}

void Network::set_labels(std::vector<std::string> labels) {
  if (!labels.empty() && labels.size() != config_.num_classes)
    throw ConfigError("expected " + std::to_string(config_.num_classes) + " labels, got " +
                      std::to_string(labels.size()));
  labels_ = std::move(labels);
}

void Network::initialise() {
  const auto seed = config_.seed;
  const std::size_t k2 = config_.kernel_size * config_.kernel_size;
  for (auto& b : conv_blocks_) {
    init_uniform(b.conv.weights, seed, b.conv.in_channels() * k2, b.conv.out_channels() * k2,
                 InitKind::he_uniform);
  }
  for (auto* group : {&image_fc_, &pose_fc_})
    for (auto& d : *group)
      init_uniform(d.weights, seed, d.in_dim(), d.out_dim(), InitKind::he_uniform);
  for (std::size_t i = 0; i < head_.size(); ++i) {
    auto& d = head_[i];
    const double gain = i + 1 == head_.size() ? kClassifierInitGain : 1.0;
    init_uniform(d.weights, seed, d.in_dim(), d.out_dim(), InitKind::glorot_uniform, gain);
  }
}

Var Network::forward_logits(Tape& tape, const Tensor& images, const Tensor* keypoints,
                            nn::Mode mode) {
  const auto& c = config_;
  if (images.ndim() != 4 || images.dim(1) != c.image_channels || images.dim(2) != c.input_height ||
      images.dim(3) != c.input_width) {
    throw InputError("images must be [B," + std::to_string(c.image_channels) + "," +
                     std::to_string(c.input_height) + "," + std::to_string(c.input_width) +
                     "], got " + shape_to_string(images.shape()));
  }
  const std::size_t batch = images.dim(0);
  if (topology_ == Topology::concatenated) {
    if (!keypoints) throw InputError("concatenated network requires keypoint input");
    if (keypoints->shape() != Shape{batch, c.pose_input_dim})
      throw InputError("keypoints must be [" + std::to_string(batch) + "," +
                       std::to_string(c.pose_input_dim) + "], got " +
                       shape_to_string(keypoints->shape()));
  } else if (keypoints) {
    throw InputError("image-only network does not accept keypoint input");
  }

  Var x = tape.constant(images);
  for (auto& block : conv_blocks_) {
    x = nn::conv2d(tape, x, block.conv);
    if (c.bn_order == BnOrder::act_then_bn) {
      x = nn::relu(tape, x);
      x = nn::batchnorm(tape, x, block.bn, mode);
    } else {
      x = nn::batchnorm(tape, x, block.bn, mode);
      x = nn::relu(tape, x);
    }
    if (block.pool_after) x = nn::maxpool2x2(tape, x);
  }
  x = ops::flatten(tape, x);
  for (auto& d : image_fc_) x = nn::relu(tape, nn::dense(tape, x, d));

  if (topology_ == Topology::concatenated) {
    Var p = tape.constant(*keypoints);
    for (auto& d : pose_fc_) p = nn::relu(tape, nn::dense(tape, p, d));
    x = ops::concat(tape, x, p, 1);
  }
  for (std::size_t i = 0; i + 1 < head_.size(); ++i) x = nn::elu(tape, nn::dense(tape, x, head_[i]));
  return nn::dense(tape, x, head_.back());
}

Tensor Network::forward(const Tensor& images, const Tensor* keypoints, nn::Mode mode) {
  Tape tape(false);
  Var logits = forward_logits(tape, images, keypoints, mode);
  return nn::softmax(tape.value(logits));
}

std::vector<Parameter*> Network::parameters() {
  std::vector<Parameter*> out;
  for (auto& b : conv_blocks_) {
    out.push_back(&b.conv.weights);
    out.push_back(&b.conv.bias);
    out.push_back(&b.bn.gamma);
    out.push_back(&b.bn.beta);
  }
  for (auto* group : {&image_fc_, &pose_fc_, &head_}) {
    for (auto& d : *group) {
      out.push_back(&d.weights);
      out.push_back(&d.bias);
    }
  }
  return out;
}

std::vector<const Parameter*> Network::parameters() const {
  auto mut = const_cast<Network*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

Archive Network::state() const {
  Archive a;
  for (const auto* p : parameters()) a.emplace(p->name, p->value);
  for (std::size_t i = 0; i < conv_blocks_.size(); ++i) {
    const auto& bn = conv_blocks_[i].bn;
    const std::string base = "image.bn" + std::to_string(i);
    a.emplace(base + ".running_mean", bn.running_mean);
    a.emplace(base + ".running_var", bn.running_var);
  }
  return a;
}

void Network::load_state(const Archive& archive) {
  auto fetch = [&](const std::string& name, Tensor& dst) {
    const Tensor& src = archive_f32(archive, name);
    if (src.shape() != dst.shape())
      throw FormatError("tensor '" + name + "' has shape " + shape_to_string(src.shape()) +
                        ", expected " + shape_to_string(dst.shape()));
    dst = src;
  };
  std::size_t expected = 0;
  for (auto* p : parameters()) {
    fetch(p->name, p->value);
    ++expected;
  }
  for (std::size_t i = 0; i < conv_blocks_.size(); ++i) {
    auto& bn = conv_blocks_[i].bn;
    const std::string base = "image.bn" + std::to_string(i);
    fetch(base + ".running_mean", bn.running_mean);
    fetch(base + ".running_var", bn.running_var);
    expected += 2;
  }
  if (archive.size() != expected) throw FormatError("checkpoint holds unexpected tensors");
}

Network build_concatenated(const ModelConfig& config) {
  return Network(config, Topology::concatenated);
}

Network build_image_only(const ModelConfig& config) { return Network(config, Topology::image_only); }

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kCheckpointMagic[4] = {'B', 'D', 'S', 'L'};

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> in, std::size_t at, std::size_t n) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in[at + i]) << (8 * i);
  return v;
}
}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Network& net) {
  json header;
  header["topology"] = to_string(net.topology());
  header["model"] = json::parse(net.config().to_json());
  if (!net.labels().empty()) header["labels"] = net.labels();
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  put_le(out, kCheckpointVersion, 2);
  put_le(out, text.size(), 4);
  out.insert(out.end(), text.begin(), text.end());
  const auto archive = encode_archive(net.state());
  out.insert(out.end(), archive.begin(), archive.end());
  put_le(out, crc32_of(out), 4);
  return out;
}

Network decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 + 2 + 4 + 4) throw FormatError("checkpoint too short");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw FormatError("bad checkpoint magic");
  const auto body = bytes.first(bytes.size() - 4);
  if (get_le(bytes, bytes.size() - 4, 4) != crc32_of(body))
    throw FormatError("checkpoint checksum mismatch");
  const auto version = get_le(body, 4, 2);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto json_len = get_le(body, 6, 4);
  if (json_len > body.size() - 10) throw FormatError("checkpoint truncated in header");
  const std::string text(body.begin() + 10, body.begin() + 10 + static_cast<std::ptrdiff_t>(json_len));

  ModelConfig config;
  Topology topology;
  std::vector<std::string> labels;
  try {
    const json header = json::parse(text);
    for (const auto& [key, _] : header.items())
      if (key != "topology" && key != "model" && key != "labels")
        throw FormatError("checkpoint header: unknown key '" + key + "'");
    topology = topology_from_string(header.at("topology").get<std::string>());
    config = ModelConfig::from_json(header.at("model").dump());
    if (header.contains("labels")) labels = header.at("labels").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  Archive state = decode_archive(body.subspan(10 + json_len));
  try {
    Network net(config, topology);
    net.load_state(state);
    net.set_labels(std::move(labels));
    return net;
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(net));
}

Network load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_checkpoint(bytes);
}

Network load_checkpoint(const std::filesystem::path& path, Topology expected) {
  Network net = load_checkpoint(path);
  if (net.topology() != expected)
    throw TopologyError("checkpoint topology is " + to_string(net.topology()) + ", expected " +
                        to_string(expected));
  return net;
}

}  // namespace bdsl
