#include "itae/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "itae/errors.hpp"

namespace itae {

namespace {

constexpr char kMagic[4] = {'T', '5', 'v', '1'};

static_assert(std::numeric_limits<double>::is_iec559, "IEEE-754 doubles required");

template <typename U>
void put_le(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw std::runtime_error("packed tensor: unexpected end of stream");
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor5& t) {
  os.write(kMagic, sizeof(kMagic));
  for (auto d : t.shape().dims) {
    if (d > std::numeric_limits<std::uint32_t>::max()) {
      throw DimensionError("packed tensor: dimension exceeds u32");
    }
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  }
  for (double v : t.data()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw std::runtime_error("packed tensor: write failed");
}

Tensor5 read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("packed tensor: bad magic");
  }
  Shape5 shape;
  for (auto& d : shape.dims) d = get_le<std::uint32_t>(is);
  std::vector<double> values(static_cast<std::size_t>(shape.numel()));
  for (auto& v : values) v = std::bit_cast<double>(get_le<std::uint64_t>(is));
  return Tensor5(shape, std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor5& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor5 load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_tensor(is);
}

}  // namespace itae
