#include "bdsl/archive.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace bdsl {

static_assert(std::endian::native == std::endian::little,
              "archive encoding assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'C', 'T', 'N', 'S'};

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

 private:
  std::vector<std::uint8_t>& out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > in_.size() - pos_) throw FormatError("archive truncated");
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename U>
  U le() {
    auto s = take(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(s[i]) << (8 * i));
    return v;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

template <typename T>
void encode_tensor(Writer& w, const std::string& name, const BasicTensor<T>& t) {
  if (name.empty() || name.size() > std::numeric_limits<std::uint16_t>::max())
    throw FormatError("archive tensor names must be 1..65535 bytes");
  if (t.ndim() > std::numeric_limits<std::uint8_t>::max()) throw FormatError("too many dims");
  w.le<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.le<std::uint8_t>(static_cast<std::uint8_t>(dtype_of<T>()));
  w.le<std::uint8_t>(static_cast<std::uint8_t>(t.ndim()));
  for (auto d : t.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw FormatError("dimension too large");
    w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
  }
  w.bytes(t.data(), t.size() * sizeof(T));
}

template <typename T>
BasicTensor<T> decode_tensor(Reader& r, Shape shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d == 0) throw FormatError("archive tensor has a zero dimension");
    if (n > r.remaining() / d) throw FormatError("archive tensor larger than file");
    n *= d;
  }
  if (n > r.remaining() / sizeof(T)) throw FormatError("archive truncated in tensor data");
  auto raw = r.take(n * sizeof(T));
  std::vector<T> data(n);
  std::memcpy(data.data(), raw.data(), raw.size());
  return BasicTensor<T>(std::move(shape), std::move(data));
}

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = crc32(crc, bytes.data() + pos, chunk);
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_archive(const Archive& archive) {
  if (archive.size() > std::numeric_limits<std::uint32_t>::max()) throw FormatError("too many tensors");
  std::vector<std::uint8_t> out;
  Writer w(out);
  w.bytes(kMagic, 4);
  w.le<std::uint16_t>(kArchiveVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(archive.size()));
  for (const auto& [name, entry] : archive)
    std::visit([&, &name = name](const auto& t) { encode_tensor(w, name, t); }, entry);
  w.le<std::uint32_t>(crc32_of(out));
  return out;
}

Archive decode_archive(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 + 2 + 4 + 4) throw FormatError("archive too short");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad archive magic");
  const auto body = bytes.first(bytes.size() - 4);
  Reader trailer(bytes.last(4));
  if (trailer.le<std::uint32_t>() != crc32_of(body)) throw FormatError("archive checksum mismatch");

  Reader r(body);
  r.take(4);
  const auto version = r.le<std::uint16_t>();
  if (version != kArchiveVersion)
    throw FormatError("unsupported archive version " + std::to_string(version));
  const auto count = r.le<std::uint32_t>();
  Archive out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.le<std::uint16_t>();
    if (name_len == 0) throw FormatError("empty tensor name");
    auto name_bytes = r.take(name_len);
    std::string name(name_bytes.begin(), name_bytes.end());
    const auto dtype = r.le<std::uint8_t>();
    const auto ndim = r.le<std::uint8_t>();
    if (ndim == 0) throw FormatError("tensor '" + name + "' has no dimensions");
    Shape shape(ndim);
    for (auto& d : shape) d = r.le<std::uint32_t>();
    ArchiveTensor t;
    if (dtype == static_cast<std::uint8_t>(DType::f32))
      t = decode_tensor<float>(r, std::move(shape));
    else if (dtype == static_cast<std::uint8_t>(DType::f64))
      t = decode_tensor<double>(r, std::move(shape));
    else
      throw FormatError("unknown dtype " + std::to_string(dtype));
    if (!out.emplace(std::move(name), std::move(t)).second)
      throw FormatError("duplicate tensor name in archive");
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after archive payload");
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_archive(const Archive& archive, const std::filesystem::path& path) {
  write_file_bytes(path, encode_archive(archive));
}

Archive read_archive(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_archive(bytes);
}

const Tensor& archive_f32(const Archive& archive, const std::string& name) {
  auto it = archive.find(name);
  if (it == archive.end()) throw FormatError("archive lacks tensor '" + name + "'");
  const auto* t = std::get_if<Tensor>(&it->second);
  if (!t) throw FormatError("tensor '" + name + "' is not f32");
  return *t;
}

}  // namespace bdsl
