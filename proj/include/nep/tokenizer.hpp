#pragma once
// Palette tokenizer: each p x p patch becomes the id of the nearest palette
// color to the patch mean; decoding paints uniform patches. Also converts
// pixel editing masks to patch-level mask sequences.

#include <cstdint>
#include <span>
#include <vector>

#include "nep/image.hpp"

namespace nep {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

// 4 x 4 x 4 lattice over {0, 85, 170, 255}; id = 16*ri + 4*gi + bi.
std::vector<Rgb> lattice_palette();

struct TokenizerConfig {
  std::size_t image_h = 32, image_w = 32, patch = 4;
  std::vector<Rgb> palette = lattice_palette();

  std::size_t rows() const { return image_h / patch; }
  std::size_t cols() const { return image_w / patch; }
  std::size_t grid_len() const { return rows() * cols(); }
  std::size_t vocab() const { return palette.size(); }
  void validate() const;  // throws Config
};

struct TokenGrid {
  std::vector<int> ids;  // raster order
  std::size_t rows = 0, cols = 0;

  std::size_t size() const { return ids.size(); }
  bool operator==(const TokenGrid&) const = default;
};

enum class MaskSelector : int { Unedit = 0, Edit = 1 };

struct EditMask {
  std::vector<std::uint8_t> pixel;  // H*W, 0 or 1
  std::vector<std::uint8_t> patch;  // L, 0 or 1, raster order
  std::size_t edit_count() const;   // L_E
};

TokenGrid encode_image(const Image& rgb, const TokenizerConfig& cfg);
Image decode_tokens(const TokenGrid& grid, const TokenizerConfig& cfg);

// Nearest palette entry to a mean color; ties go to the lowest id.
int nearest_palette_id(double r, double g, double b, const std::vector<Rgb>& palette);

// Any nonzero pixel marks its patch for editing (max-pool).
EditMask patchify_mask(const Image& pixel_mask, const TokenizerConfig& cfg);
EditMask patchify_mask(std::span<const std::uint8_t> pixel_mask, const TokenizerConfig& cfg);

// Patch bits -> full EditMask whose pixel layer covers exactly those patches.
EditMask mask_from_patches(std::span<const std::uint8_t> patch_bits, const TokenizerConfig& cfg);

// Single-channel 0/255 image of the pixel layer.
Image mask_image(const EditMask& mask, const TokenizerConfig& cfg);

std::vector<MaskSelector> mask_token_ids(const EditMask& mask);

}  // namespace nep
