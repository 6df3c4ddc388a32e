#pragma once
// Model input assembly: text prefix, optional source/mask condition segments,
// generation order and target-aware positional-embedding indices.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nep/rng.hpp"
#include "nep/tokenizer.hpp"

namespace nep {

inline constexpr int kPadId = 0;

// Fixed word vocabulary of the synthetic caption/instruction grammar.
class TextVocab {
 public:
  static const TextVocab& standard();

  std::size_t size() const { return words_.size(); }
  const std::string& word(int id) const { return words_.at(std::size_t(id)); }
  std::optional<int> find(std::string_view word) const;

 private:
  explicit TextVocab(std::vector<std::string> words) : words_(std::move(words)) {}
  std::vector<std::string> words_;
};

struct TextTokens {
  std::vector<int> ids;  // fixed length, PAD only as a left prefix
  bool operator==(const TextTokens&) const = default;
};

// Lowercases and splits on non-letters. Throws Input on unknown words, empty
// text (unless allow_empty) or more than text_len words.
TextTokens encode_text(std::string_view text, std::size_t text_len, bool allow_empty = false);
std::string decode_text(const TextTokens& t);

struct GenerationOrder {
  std::vector<int> positions;

  std::size_t size() const { return positions.size(); }
  bool is_permutation_of(std::size_t grid_len) const;
  bool is_strictly_increasing() const;
  static GenerationOrder identity(std::size_t grid_len);
};

// Identity with probability raster_prob, else a uniform random permutation.
GenerationOrder sample_order(std::size_t grid_len, Rng& rng, double raster_prob);

// Ascending positions with M^E = 1.
GenerationOrder editing_order(const EditMask& mask);

enum class Segment : std::uint8_t { Text = 0, Source = 1, Mask = 2 };

// Source slot id meaning "token withheld": embedded with the edit embedding
// instead of an image token.
inline constexpr int kPlaceholderId = -1;

struct SequenceLayout {
  std::vector<int> prefix_ids;    // text ids, then source ids, then MaskSelector values
  std::vector<Segment> segment_tags;
  std::vector<int> prefix_pos;    // text slot index, or grid position for source/mask slots
  GenerationOrder gen_order;
  std::vector<int> pe_index_per_step;       // o_i for generation step i
  std::optional<std::vector<int>> teacher_ids;  // I_{o_i}
  std::size_t text_len = 0;
  std::size_t grid_len = 0;

  std::size_t prefix_len() const { return prefix_ids.size(); }
  std::size_t steps() const { return gen_order.size(); }
  bool is_edit() const { return prefix_ids.size() > text_len; }
};

// Text-to-image pretraining layout. The grid, when given, fills teacher_ids.
SequenceLayout build_pretrain_layout(const TextTokens& text, const TokenGrid& grid,
                                     const GenerationOrder& order);
SequenceLayout build_pretrain_layout(const TextTokens& text, std::size_t grid_len,
                                     const GenerationOrder& order);

struct EditLayoutOptions {
  // Replace source tokens at edit positions with kPlaceholderId.
  bool mask_previous = false;
  // Decode the edit positions in this order instead of ascending. Must be a
  // permutation of the edit positions.
  std::optional<GenerationOrder> order;
};

// Editing layout: text, L source ids, L mask selectors. Without a mask, or
// with an all-zero mask, every position is generated in raster order.
SequenceLayout build_edit_layout(const TextTokens& text, const TokenGrid& source,
                                 const std::optional<EditMask>& mask,
                                 const std::optional<TokenGrid>& targets,
                                 const EditLayoutOptions& opts = {});

}  // namespace nep
