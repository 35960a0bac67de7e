#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "diffedit/tensor.hpp"

namespace diffedit {

// Binary PGM (P5), maxval 255. Pixel values map affinely:
//   byte = round((x + 1) / 2 * 255) (clamped),  x = byte / 255 * 2 - 1
std::uint8_t pixel_to_byte(double x);
double byte_to_pixel(std::uint8_t b);

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  Tensor pixels;  // {1, width * height}, row-major
};

// Throws FormatError naming the byte offset of the first problem.
GrayImage parse_pgm(const std::string& bytes);
GrayImage read_pgm(const std::filesystem::path& path);

std::string encode_pgm(const Tensor& pixels, std::size_t width, std::size_t height);
void write_pgm(const std::filesystem::path& path, const Tensor& pixels, std::size_t width,
               std::size_t height);

}  // namespace diffedit
