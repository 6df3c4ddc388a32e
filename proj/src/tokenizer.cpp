#include "nep/tokenizer.hpp"

#include <limits>
#include <set>

#include "nep/error.hpp"

namespace nep {

std::vector<Rgb> lattice_palette() {
  static constexpr std::uint8_t kLevels[4] = {0, 85, 170, 255};
  std::vector<Rgb> p;
  p.reserve(64);
  for (int r = 0; r < 4; ++r)
    for (int g = 0; g < 4; ++g)
      for (int b = 0; b < 4; ++b) p.push_back({kLevels[r], kLevels[g], kLevels[b]});
  return p;
}

void TokenizerConfig::validate() const {
  require(patch > 0 && image_h > 0 && image_w > 0, ErrorKind::Config, "tokenizer: zero extent");
  require(image_h % patch == 0 && image_w % patch == 0, ErrorKind::Config,
          "tokenizer: image size not divisible by patch");
  require(!palette.empty() && palette.size() <= 4096, ErrorKind::Config, "tokenizer: palette size");
  std::set<std::uint32_t> seen;
  for (const auto& c : palette)
    require(seen.insert((c.r << 16) | (c.g << 8) | c.b).second, ErrorKind::Config,
            "tokenizer: duplicate palette entry");
}

std::size_t EditMask::edit_count() const {
  std::size_t n = 0;
  for (auto b : patch) n += b ? 1 : 0;
  return n;
}

int nearest_palette_id(double r, double g, double b, const std::vector<Rgb>& palette) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < palette.size(); ++i) {
    const double dr = r - palette[i].r, dg = g - palette[i].g, db = b - palette[i].b;
    const double d = dr * dr + dg * dg + db * db;
    if (d < best_d) {
      best_d = d;
      best = int(i);
    }
  }
  return best;
}

TokenGrid encode_image(const Image& rgb, const TokenizerConfig& cfg) {
  require(rgb.channels == 3 && rgb.height == cfg.image_h && rgb.width == cfg.image_w &&
              rgb.pixels.size() == rgb.height * rgb.width * 3,
          ErrorKind::Input, "encode_image: image size does not match tokenizer config");
  TokenGrid grid{std::vector<int>(cfg.grid_len()), cfg.rows(), cfg.cols()};
  const double inv = 1.0 / double(cfg.patch * cfg.patch);
  for (std::size_t gy = 0; gy < grid.rows; ++gy)
    for (std::size_t gx = 0; gx < grid.cols; ++gx) {
      double sum[3] = {0, 0, 0};
      for (std::size_t y = 0; y < cfg.patch; ++y)
        for (std::size_t x = 0; x < cfg.patch; ++x) {
          const auto* px = rgb.at(gy * cfg.patch + y, gx * cfg.patch + x);
          for (int c = 0; c < 3; ++c) sum[c] += px[c];
        }
      grid.ids[gy * grid.cols + gx] =
          nearest_palette_id(sum[0] * inv, sum[1] * inv, sum[2] * inv, cfg.palette);
    }
  return grid;
}

Image decode_tokens(const TokenGrid& grid, const TokenizerConfig& cfg) {
  require(grid.rows == cfg.rows() && grid.cols == cfg.cols() && grid.ids.size() == cfg.grid_len(),
          ErrorKind::Config, "decode_tokens: grid shape does not match tokenizer config");
  Image img(cfg.image_h, cfg.image_w, 3);
  for (std::size_t i = 0; i < grid.ids.size(); ++i) {
    const int id = grid.ids[i];
    require(id >= 0 && std::size_t(id) < cfg.palette.size(), ErrorKind::Corruption,
            "decode_tokens: token id " + std::to_string(id) + " out of range");
    const Rgb c = cfg.palette[std::size_t(id)];
    const std::size_t gy = i / grid.cols, gx = i % grid.cols;
    for (std::size_t y = 0; y < cfg.patch; ++y)
      for (std::size_t x = 0; x < cfg.patch; ++x) {
        auto* px = img.at(gy * cfg.patch + y, gx * cfg.patch + x);
        px[0] = c.r;
        px[1] = c.g;
        px[2] = c.b;
      }
  }
  return img;
}

EditMask patchify_mask(std::span<const std::uint8_t> pixel_mask, const TokenizerConfig& cfg) {
  require(pixel_mask.size() == cfg.image_h * cfg.image_w, ErrorKind::Input,
          "patchify_mask: mask size does not match tokenizer config");
  EditMask m;
  m.pixel.resize(pixel_mask.size());
  m.patch.assign(cfg.grid_len(), 0);
  for (std::size_t y = 0; y < cfg.image_h; ++y)
    for (std::size_t x = 0; x < cfg.image_w; ++x) {
      const std::size_t i = y * cfg.image_w + x;
      m.pixel[i] = pixel_mask[i] ? 1 : 0;
      if (m.pixel[i]) m.patch[(y / cfg.patch) * cfg.cols() + x / cfg.patch] = 1;
    }
  return m;
}

EditMask patchify_mask(const Image& pixel_mask, const TokenizerConfig& cfg) {
  require(pixel_mask.channels == 1 && pixel_mask.height == cfg.image_h && pixel_mask.width == cfg.image_w,
          ErrorKind::Input, "patchify_mask: mask must be single-channel H x W");
  return patchify_mask(std::span<const std::uint8_t>(pixel_mask.pixels), cfg);
}

EditMask mask_from_patches(std::span<const std::uint8_t> patch_bits, const TokenizerConfig& cfg) {
  require(patch_bits.size() == cfg.grid_len(), ErrorKind::Input, "mask_from_patches: length != L");
  EditMask m;
  m.patch.assign(patch_bits.begin(), patch_bits.end());
  for (auto& b : m.patch) b = b ? 1 : 0;
  m.pixel.assign(cfg.image_h * cfg.image_w, 0);
  for (std::size_t y = 0; y < cfg.image_h; ++y)
    for (std::size_t x = 0; x < cfg.image_w; ++x)
      m.pixel[y * cfg.image_w + x] = m.patch[(y / cfg.patch) * cfg.cols() + x / cfg.patch];
  return m;
}

Image mask_image(const EditMask& mask, const TokenizerConfig& cfg) {
  Image img(cfg.image_h, cfg.image_w, 1);
  for (std::size_t i = 0; i < mask.pixel.size(); ++i) img.pixels[i] = mask.pixel[i] ? 255 : 0;
  return img;
}

std::vector<MaskSelector> mask_token_ids(const EditMask& mask) {
  std::vector<MaskSelector> out(mask.patch.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = mask.patch[i] ? MaskSelector::Edit : MaskSelector::Unedit;
  return out;
}

}  // namespace nep
