#pragma once
// Inference-time editing: mask-scoped regeneration with the fine-tuned model,
// zero-shot regeneration with a pretrained model by order scheduling, and
// fill-back into the source.

#include <optional>
#include <string>
#include <vector>

#include "nep/image.hpp"
#include "nep/model.hpp"

namespace nep {

struct EditRequest {
  Image source;               // RGB at the tokenizer resolution
  std::optional<Image> mask;  // single channel, nonzero = edit
  std::string instruction;
  SamplerConfig sampler;
  std::uint64_t seed = 0;
  bool mask_previous = false;
};

struct EditResult {
  Image image;
  TokenGrid grid;
  std::vector<int> positions;  // O^E, in decode order
  std::vector<int> generated;  // I_E, aligned with positions
  std::size_t l_e = 0;         // number of edited positions
  std::size_t steps = 0;       // decode steps actually sampled
  std::vector<double> logprobs;
  double logprob_sum = 0;
  bool full_regeneration = false;
};

// Result grid = source grid with O^E replaced. Pixels of patches outside the
// mask are copied from the source image, so they are byte-identical even when
// the source is not exactly representable by the palette. Without a mask, or
// with an empty one, the whole grid is regenerated in raster order.
EditResult nep_edit(const ModelParams& params, const TokenizerConfig& tok, const EditRequest& req);

// Same, on token grids; `order` (a permutation of the mask's positions)
// replaces ascending order when given.
EditResult nep_edit_grid(const ModelParams& params, const TokenGrid& source, const TextTokens& text,
                         const std::optional<EditMask>& mask, const SamplerConfig& sampler, Rng& rng,
                         bool mask_previous = false, const std::optional<GenerationOrder>& order = std::nullopt);

// Stage-1 editing: keep positions are teacher-forced first (ascending), the
// rest sampled after them (ascending).
EditResult zero_shot_edit(const ModelParams& params, const TokenGrid& source, const std::vector<int>& keep_positions,
                          const TextTokens& text, const SamplerConfig& sampler, Rng& rng);

struct GenerateResult {
  TokenGrid grid;
  Image image;
  std::vector<double> logprobs;
  double logprob_sum = 0;
};

// Text-to-image generation in raster order, seeded.
GenerateResult generate_image(const ModelParams& params, const TokenizerConfig& tok, const TextTokens& text,
                              const SamplerConfig& sampler, std::uint64_t seed);

// FNV-1a 64 (16 hex digits) over the pixels of patches outside the mask, in
// raster order. Without a mask there are no such pixels.
std::string outside_mask_checksum(const Image& img, const std::optional<EditMask>& mask, const TokenizerConfig& tok);

struct EditTurn {
  std::optional<Image> mask;
  std::string instruction;
};

// Turn t edits the output of turn t - 1; turn t uses seed fork(t) of `seed`.
std::vector<EditResult> multi_turn_edit(const ModelParams& params, const TokenizerConfig& tok, const Image& source,
                                        const std::vector<EditTurn>& turns, const SamplerConfig& sampler,
                                        std::uint64_t seed);

}  // namespace nep
