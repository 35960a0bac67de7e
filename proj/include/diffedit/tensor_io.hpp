#pragma once

#include <filesystem>
#include <iosfwd>

#include "diffedit/tensor.hpp"

namespace diffedit {

// SWTF binary tensor format:
//   "SWTF" | u8 version (1) | u32 rank | u32 dims[rank] | f64 payload
// All integers and floats little-endian, payload row-major.
inline constexpr std::uint8_t kSwtfVersion = 1;

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace diffedit
