#include "ksac/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "ksac/errors.hpp"

namespace ksac {

namespace {

constexpr char kMagic[4] = {'K', 'S', 'A', 'C'};

template <typename T>
void put_le(std::ostream& os, T value) {
  static_assert(std::is_unsigned_v<T>);
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw IoError("checkpoint: truncated input");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& tensors) {
  os.write(kMagic, 4);
  put_le<std::uint32_t>(os, kCheckpointVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    for (std::int64_t d : tensor.shape().dims()) put_le<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    for (Real v : tensor.data()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
  }
  if (!os) throw IoError("checkpoint: write failed");
}

std::vector<NamedTensor> read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw IoError("checkpoint: bad magic");
  const auto version = get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = get_le<std::uint32_t>(is);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get_le<std::uint32_t>(is);
    std::string name(len, '\0');
    if (len > 0 && !is.read(name.data(), len)) throw IoError("checkpoint: truncated name");
    Shape shape;
    shape.n = static_cast<std::int64_t>(get_le<std::uint64_t>(is));
    shape.c = static_cast<std::int64_t>(get_le<std::uint64_t>(is));
    shape.h = static_cast<std::int64_t>(get_le<std::uint64_t>(is));
    shape.w = static_cast<std::int64_t>(get_le<std::uint64_t>(is));
    std::vector<Real> values(static_cast<std::size_t>(shape.numel()));
    for (Real& v : values) v = static_cast<Real>(std::bit_cast<double>(get_le<std::uint64_t>(is)));
    out.push_back({std::move(name), Tensor(shape, std::move(values))});
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
  write_checkpoint(os, tensors);
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  try {
    return read_checkpoint(is);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace ksac
