#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cxr {

/// 8-bit grayscale raster, row-major.
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(int w, int h, std::uint8_t fill = 0);

  bool empty() const { return width <= 0 || height <= 0; }
  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const Image8&, const Image8&) = default;
};

/// Content digest over dimensions and pixels; metadata never enters it.
std::string image_digest(const Image8& img);

/// Binary (P5) PGM encoding.
std::string encode_pgm(const Image8& img);
Image8 decode_pgm(const std::string& bytes);
void write_pgm(const std::filesystem::path& path, const Image8& img);

}  // namespace cxr
