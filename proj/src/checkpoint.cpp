#include "hvpr/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "hvpr/error.hpp"

namespace hvpr {

namespace {

constexpr std::array<char, 8> kMagic = {'H', 'V', 'P', 'R', 'C', 'K', 'P', 'T'};
constexpr std::array<char, 8> kOptTag = {'O', 'P', 'T', 'S', 'T', 'A', 'T', 'E'};
constexpr std::array<char, 8> kConfigTag = {'C', 'O', 'N', 'F', 'I', 'G', 'J', 'S'};

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  template <typename T>
  T get_le() {
    unsigned char bytes[sizeof(T)];
    read(bytes, sizeof(T));
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
    return value;
  }

  void read(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw ParseError("checkpoint: truncated at byte " + std::to_string(offset_), offset_);
    }
    offset_ += n;
  }

  void expect_tag(const std::array<char, 8>& tag) {
    std::array<char, 8> got{};
    read(got.data(), got.size());
    if (got != tag) {
      throw ParseError("checkpoint: expected section '" + std::string(tag.data(), 8) + "' at byte " +
                           std::to_string(offset_ - 8),
                       offset_ - 8);
    }
  }

  std::size_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::size_t offset_ = 0;
};

void write_entries(std::ostream& out, const std::vector<std::pair<std::string, Tensor>>& entries) {
  put_le<std::uint64_t>(out, entries.size());
  for (const auto& [name, tensor] : entries) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t e : tensor.shape()) put_le<std::uint64_t>(out, e);
    for (double v : tensor.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
}

std::vector<std::pair<std::string, Tensor>> read_entries(Reader& r) {
  constexpr std::uint64_t kMaxEntries = 1u << 20;
  constexpr std::uint64_t kMaxElements = 1ull << 32;
  const auto count = r.get_le<std::uint64_t>();
  if (count > kMaxEntries) throw ParseError("checkpoint: implausible entry count", r.offset() - 8);
  std::vector<std::pair<std::string, Tensor>> entries;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.get_le<std::uint32_t>();
    std::string name(name_len, '\0');
    r.read(name.data(), name_len);
    const auto rank = r.get_le<std::uint32_t>();
    if (rank > 8) throw ParseError("checkpoint: implausible rank for '" + name + "'", r.offset() - 4);
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(r.get_le<std::uint64_t>());
      numel *= shape.back();
      if (numel > kMaxElements) throw ParseError("checkpoint: tensor '" + name + "' too large", r.offset());
    }
    std::vector<double> values(numel);
    for (auto& v : values) v = std::bit_cast<double>(r.get_le<std::uint64_t>());
    entries.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return entries;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kCheckpointVersion);
  write_entries(out, ckpt.params);
  out.write(kOptTag.data(), kOptTag.size());
  put_le<std::uint64_t>(out, ckpt.optimizer_step);
  write_entries(out, ckpt.optimizer_state);
  out.write(kConfigTag.data(), kConfigTag.size());
  put_le<std::uint64_t>(out, ckpt.config_json.size());
  out.write(ckpt.config_json.data(), static_cast<std::streamsize>(ckpt.config_json.size()));
}

Checkpoint read_checkpoint(std::istream& in) {
  Reader r(in);
  std::array<char, 8> magic{};
  r.read(magic.data(), magic.size());
  if (magic != kMagic) throw ParseError("checkpoint: bad magic bytes", 0);
  const auto version = r.get_le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: format version " + std::to_string(version) +
                    " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  ckpt.params = read_entries(r);
  r.expect_tag(kOptTag);
  ckpt.optimizer_step = r.get_le<std::uint64_t>();
  ckpt.optimizer_state = read_entries(r);
  r.expect_tag(kConfigTag);
  const auto len = r.get_le<std::uint64_t>();
  if (len > (1u << 26)) throw ParseError("checkpoint: implausible config length", r.offset() - 8);
  ckpt.config_json.resize(len);
  r.read(ckpt.config_json.data(), len);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  write_checkpoint(out, ckpt);
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(in);
}

}  // namespace hvpr
