#include "cxr/image.hpp"

#include <fstream>
#include <sstream>

#include "cxr/digest.hpp"
#include "cxr/error.hpp"

namespace cxr {

Image8::Image8(int w, int h, std::uint8_t fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

std::string image_digest(const Image8& img) {
  Sha256 h;
  h.update_u32(static_cast<std::uint32_t>(img.width)).update_u32(static_cast<std::uint32_t>(img.height));
  h.update(img.pixels);
  return h.hex();
}

std::string encode_pgm(const Image8& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(img.pixels.begin(), img.pixels.end());
  return out;
}

Image8 decode_pgm(const std::string& bytes) {
  std::istringstream in(bytes);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255) {
    throw Error(Errc::InvalidArgument, "not an 8-bit binary PGM");
  }
  in.get();
  Image8 img(w, h);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw Error(Errc::InvalidArgument, "truncated PGM raster");
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const Image8& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot open " + path.string());
  const std::string data = encode_pgm(img);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

}  // namespace cxr
