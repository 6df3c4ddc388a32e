#include "nep/edit.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "nep/error.hpp"

namespace nep {

namespace {

void record(EditResult& res, const SequenceLayout& lay, const DecodeResult& d) {
  res.positions = lay.gen_order.positions;
  res.generated = d.tokens;
  res.steps = d.sampled_steps;
  res.logprobs = d.logprobs;
  res.logprob_sum = 0;
  for (double lp : d.logprobs) res.logprob_sum += lp;
}

}  // namespace

EditResult nep_edit_grid(const ModelParams& params, const TokenGrid& source, const TextTokens& text,
                         const std::optional<EditMask>& mask, const SamplerConfig& sampler, Rng& rng,
                         bool mask_previous, const std::optional<GenerationOrder>& order) {
  require(params.cfg.edit_extension, ErrorKind::Config, "nep_edit: model lacks the edit extension");
  EditLayoutOptions opts;
  opts.mask_previous = mask_previous;
  opts.order = order;
  const bool masked = mask && mask->edit_count() > 0;
  const auto lay = build_edit_layout(text, source, masked ? mask : std::nullopt, std::nullopt, opts);
  const auto d = decode(params, lay, sampler, rng);
  EditResult res;
  record(res, lay, d);
  res.full_regeneration = !masked;
  res.l_e = lay.steps();
  res.grid = source;
  for (std::size_t i = 0; i < res.positions.size(); ++i)
    res.grid.ids[std::size_t(res.positions[i])] = res.generated[i];
  return res;
}

EditResult nep_edit(const ModelParams& params, const TokenizerConfig& tok, const EditRequest& req) {
  const auto source = encode_image(req.source, tok);
  std::optional<EditMask> mask;
  if (req.mask) mask = patchify_mask(*req.mask, tok);
  const auto text = encode_text(req.instruction, params.cfg.text_len, true);
  Rng rng(req.seed, 0x65646974);
  auto res = nep_edit_grid(params, source, text, mask, req.sampler, rng, req.mask_previous);
  res.image = decode_tokens(res.grid, tok);
  if (!res.full_regeneration) {
    // Unedited patches take the source pixels verbatim.
    const std::size_t p = tok.patch, ch = 3;
    for (std::size_t pos = 0; pos < res.grid.size(); ++pos) {
      if (mask->patch[pos]) continue;
      const std::size_t r0 = (pos / tok.cols()) * p, c0 = (pos % tok.cols()) * p;
      for (std::size_t y = r0; y < r0 + p; ++y) {
        const std::size_t off = (y * tok.image_w + c0) * ch;
        std::copy_n(req.source.pixels.begin() + std::ptrdiff_t(off), p * ch,
                    res.image.pixels.begin() + std::ptrdiff_t(off));
      }
    }
  }
  return res;
}

EditResult zero_shot_edit(const ModelParams& params, const TokenGrid& source, const std::vector<int>& keep_positions,
                          const TextTokens& text, const SamplerConfig& sampler, Rng& rng) {
  const std::size_t L = source.size();
  std::set<int> keep(keep_positions.begin(), keep_positions.end());
  require(keep.size() == keep_positions.size(), ErrorKind::Input, "zero_shot_edit: duplicate keep positions");
  require(keep.empty() || (*keep.begin() >= 0 && std::size_t(*keep.rbegin()) < L), ErrorKind::Input,
          "zero_shot_edit: keep position out of range");
  GenerationOrder order;
  for (int p : keep) order.positions.push_back(p);
  for (std::size_t p = 0; p < L; ++p)
    if (!keep.count(int(p))) order.positions.push_back(int(p));
  const auto lay = build_pretrain_layout(text, source, order);
  const auto d = decode(params, lay, sampler, rng, keep.size());
  EditResult res;
  res.grid = source;
  res.l_e = L - keep.size();
  res.steps = d.sampled_steps;
  res.logprobs = d.logprobs;
  for (double lp : d.logprobs) res.logprob_sum += lp;
  for (std::size_t i = keep.size(); i < L; ++i) {
    res.positions.push_back(order.positions[i]);
    res.generated.push_back(d.tokens[i]);
    res.grid.ids[std::size_t(order.positions[i])] = d.tokens[i];
  }
  res.full_regeneration = keep.empty();
  return res;
}

GenerateResult generate_image(const ModelParams& params, const TokenizerConfig& tok, const TextTokens& text,
                              const SamplerConfig& sampler, std::uint64_t seed) {
  const std::size_t L = params.cfg.grid_len;
  require(L == tok.grid_len(), ErrorKind::Config, "generate: model grid does not match the tokenizer");
  Rng rng(seed, 0x67656e);
  const auto lay = build_pretrain_layout(text, L, GenerationOrder::identity(L));
  auto d = decode(params, lay, sampler, rng);
  GenerateResult g;
  g.grid = TokenGrid{std::move(d.tokens), tok.rows(), tok.cols()};
  g.image = decode_tokens(g.grid, tok);
  g.logprobs = std::move(d.logprobs);
  for (double lp : g.logprobs) g.logprob_sum += lp;
  return g;
}

std::string outside_mask_checksum(const Image& img, const std::optional<EditMask>& mask, const TokenizerConfig& tok) {
  require(img.height == tok.image_h && img.width == tok.image_w && img.channels == 3, ErrorKind::Input,
          "checksum: image size does not match tokenizer config");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  if (mask) {
    require(mask->patch.size() == tok.grid_len(), ErrorKind::Input, "checksum: mask size != L");
    for (std::size_t y = 0; y < tok.image_h; ++y)
      for (std::size_t x = 0; x < tok.image_w; ++x) {
        if (mask->patch[(y / tok.patch) * tok.cols() + x / tok.patch]) continue;
        for (std::size_t c = 0; c < 3; ++c) {
          h ^= img.at(y, x)[c];
          h *= 0x100000001b3ULL;
        }
      }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<EditResult> multi_turn_edit(const ModelParams& params, const TokenizerConfig& tok, const Image& source,
                                        const std::vector<EditTurn>& turns, const SamplerConfig& sampler,
                                        std::uint64_t seed) {
  require(!turns.empty(), ErrorKind::Input, "multi_turn_edit: no turns");
  std::vector<EditResult> out;
  Image current = source;
  const Rng base(seed, 0x7475726e);
  for (std::size_t t = 0; t < turns.size(); ++t) {
    EditRequest req{current, turns[t].mask, turns[t].instruction, sampler, base.fork(t).next_u64(), false};
    out.push_back(nep_edit(params, tok, req));
    current = out.back().image;
  }
  return out;
}

}  // namespace nep
