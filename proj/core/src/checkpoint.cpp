#include "exposura/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <zlib.h>

#include "exposura/error.hpp"
#include "exposura/fileio.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace exposura {

namespace {

constexpr char kMagic[4] = {'E', 'X', 'P', 'W'};

class Writer {
 public:
  template <typename U>
  void put(U v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(U));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
  bool has(std::size_t n) const { return pos_ + n <= bytes_.size(); }
  template <typename U>
  U get() {
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  void get_bytes(void* dst, std::size_t n) {
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::span<const std::uint8_t> b) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < b.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(b.size() - off, 1u << 30));
    crc = crc32(crc, b.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> encode_weights(const ModelWeights& weights) {
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(weights.size()));
  for (const auto& [name, t] : weights) {
    if (name.empty() || name.size() > 0xFFFF) throw FormatError("tensor name length out of range: '" + name + "'");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (auto e : t.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(e));
    w.put_bytes(t.raw(), static_cast<std::size_t>(t.numel()) * sizeof(float));
  }
  const auto crc = crc_of(w.bytes());
  w.put<std::uint32_t>(crc);
  return std::move(w.bytes());
}

ModelWeights decode_weights(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (!r.has(4) || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not an EXPW checkpoint (bad magic)");
  }
  r.get<std::uint32_t>();
  if (!r.has(8)) throw FormatError("truncated checkpoint header");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();

  ModelWeights out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string where = "tensor #" + std::to_string(i);
    if (!r.has(2)) throw FormatError("truncated at " + where);
    const auto len = r.get<std::uint16_t>();
    if (!r.has(len)) throw FormatError("truncated at " + where);
    std::string name(len, '\0');
    r.get_bytes(name.data(), len);
    if (!r.has(1)) throw FormatError("truncated at tensor " + name);
    const auto rank = r.get<std::uint8_t>();
    if (rank < 1 || rank > 4) throw FormatError("tensor " + name + " has invalid rank " + std::to_string(rank));
    if (!r.has(4u * rank)) throw FormatError("truncated at tensor " + name);
    Shape shape;
    for (int k = 0; k < rank; ++k) {
      const auto e = r.get<std::uint32_t>();
      if (e == 0) throw FormatError("tensor " + name + " has a zero extent");
      shape.push_back(e);
    }
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    if (!r.has(n * sizeof(float))) throw FormatError("truncated at tensor " + name);
    std::vector<float> values(n);
    r.get_bytes(values.data(), n * sizeof(float));
    if (!out.emplace(name, Tensor<float>(shape, std::move(values))).second) {
      throw FormatError("duplicate tensor name " + name);
    }
  }
  const std::size_t body = r.pos();
  if (!r.has(4)) throw FormatError("truncated at checksum");
  const auto stored = r.get<std::uint32_t>();
  if (stored != crc_of(bytes.first(body))) throw FormatError("checkpoint checksum mismatch");
  if (r.has(1)) throw FormatError("trailing bytes after checkpoint checksum");
  return out;
}

void save_weights(const ModelWeights& weights, const std::filesystem::path& path) {
  write_file_atomic(path, encode_weights(weights));
}

ModelWeights load_weights(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_weights(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace exposura
