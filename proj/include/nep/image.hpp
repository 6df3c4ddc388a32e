#pragma once
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace nep {

// 8-bit interleaved image; channels is 3 (RGB) or 1 (mask / gray).
struct Image {
  std::size_t height = 0, width = 0, channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, std::uint8_t fill = 0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  std::uint8_t* at(std::size_t y, std::size_t x) { return pixels.data() + (y * width + x) * channels; }
  const std::uint8_t* at(std::size_t y, std::size_t x) const {
    return pixels.data() + (y * width + x) * channels;
  }
  bool operator==(const Image&) const = default;
};

// PNG codec (libpng). Decoding converts to 8-bit RGB, or to 8-bit gray when
// want_channels == 1. Encoding uses fixed settings so output bytes are
// reproducible.
std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_png(const std::vector<std::uint8_t>& bytes, std::size_t want_channels = 3);

Image read_png(const std::filesystem::path& path, std::size_t want_channels = 3);
void write_png(const std::filesystem::path& path, const Image& img);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);  // throws Input on bad data

}  // namespace nep
