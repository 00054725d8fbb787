#include "duel/grad/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "duel/error.hpp"

namespace duel::grad {
namespace {

constexpr std::uint32_t kMaxNameLength = 1u << 16;
constexpr std::uint32_t kMaxRank = 8;

template <typename U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw InputError(std::string("checkpoint truncated while reading ") + what);
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ParamStore& params) {
  out.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
  put_le<std::uint64_t>(out, params.seed());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params.entries()) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float v : t.values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw InputError("failed to write checkpoint");
}

ParamStore read_checkpoint(std::istream& in) {
  std::string magic(kCheckpointMagic.size(), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || magic != kCheckpointMagic) throw InputError("not a checkpoint: bad magic");
  ParamStore params(get_le<std::uint64_t>(in, "seed"));
  const auto count = get_le<std::uint32_t>(in, "entry count");
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto name_len = get_le<std::uint32_t>(in, "name length");
    if (name_len == 0 || name_len > kMaxNameLength) throw InputError("checkpoint: implausible name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw InputError("checkpoint truncated in parameter name");
    const auto rank = get_le<std::uint32_t>(in, "rank");
    if (rank == 0 || rank > kMaxRank) throw InputError("checkpoint: bad rank for '" + name + "'");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(get_le<std::uint32_t>(in, "shape"));
    std::vector<float> values(shape_product(shape));
    for (auto& v : values) v = std::bit_cast<float>(get_le<std::uint32_t>(in, "payload"));
    params.insert(name, Tensor(std::move(shape), std::move(values)));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw InputError("checkpoint has trailing bytes");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, params);
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace duel::grad
