#include "diffedit/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "diffedit/error.hpp"

namespace diffedit {
namespace {

static_assert(std::endian::native == std::endian::little,
              "SWTF I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(buf, sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
  char buf[sizeof(T)];
  if (!in.read(buf, sizeof(T))) {
    throw FormatError(std::string("SWTF: truncated ") + what);
  }
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write("SWTF", 4);
  put<std::uint8_t>(out, kSwtfVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!out) throw IoError("SWTF: write failed");
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "SWTF", 4) != 0) {
    throw FormatError("SWTF: bad magic");
  }
  const auto version = get<std::uint8_t>(in, "version");
  if (version != kSwtfVersion) {
    throw FormatError("SWTF: unsupported version " + std::to_string(version));
  }
  const auto rank = get<std::uint32_t>(in, "rank");
  if (rank > 8) throw FormatError("SWTF: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = get<std::uint32_t>(in, "dims");
  Tensor t(shape);
  if (!in.read(reinterpret_cast<char*>(t.data().data()),
               static_cast<std::streamsize>(t.size() * sizeof(double)))) {
    throw FormatError("SWTF: truncated payload for shape " + shape_string(shape));
  }
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace diffedit
