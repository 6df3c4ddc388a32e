#include "nep/sequence.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>

#include "nep/error.hpp"

namespace nep {

const TextVocab& TextVocab::standard() {
  static const TextVocab vocab({
      "<pad>", "a",      "the",     "and",    "on",     "with",   "at",     "make",
      "add",   "remove", "replace", "no",     "change", "red",    "green",  "blue",
      "yellow", "cyan",  "magenta", "orange", "purple", "black",  "gray",   "white",
      "square", "circle", "bar",    "top",    "bottom", "left",   "right",  "background",
  });
  return vocab;
}

std::optional<int> TextVocab::find(std::string_view word) const {
  for (std::size_t i = 1; i < words_.size(); ++i)
    if (words_[i] == word) return int(i);
  return std::nullopt;
}

TextTokens encode_text(std::string_view text, std::size_t text_len, bool allow_empty) {
  const auto& vocab = TextVocab::standard();
  std::vector<int> ids;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    const auto id = vocab.find(cur);
    require(id.has_value(), ErrorKind::Input, "unknown vocabulary word '" + cur + "'");
    ids.push_back(*id);
    cur.clear();
  };
  for (char ch : text) {
    if (std::isalpha(static_cast<unsigned char>(ch)))
      cur += char(std::tolower(static_cast<unsigned char>(ch)));
    else
      flush();
  }
  flush();
  require(allow_empty || !ids.empty(), ErrorKind::Input, "empty text");
  require(ids.size() <= text_len, ErrorKind::Input,
          "text has " + std::to_string(ids.size()) + " words, limit is " + std::to_string(text_len));
  TextTokens t;
  t.ids.assign(text_len - ids.size(), kPadId);
  t.ids.insert(t.ids.end(), ids.begin(), ids.end());
  return t;
}

std::string decode_text(const TextTokens& t) {
  std::string out;
  for (int id : t.ids) {
    if (id == kPadId) continue;
    if (!out.empty()) out += ' ';
    out += TextVocab::standard().word(id);
  }
  return out;
}

bool GenerationOrder::is_permutation_of(std::size_t grid_len) const {
  if (positions.size() != grid_len) return false;
  std::vector<char> seen(grid_len, 0);
  for (int p : positions) {
    if (p < 0 || std::size_t(p) >= grid_len || seen[std::size_t(p)]) return false;
    seen[std::size_t(p)] = 1;
  }
  return true;
}

bool GenerationOrder::is_strictly_increasing() const {
  return std::adjacent_find(positions.begin(), positions.end(),
                            [](int a, int b) { return a >= b; }) == positions.end();
}

GenerationOrder GenerationOrder::identity(std::size_t grid_len) {
  GenerationOrder o;
  o.positions.resize(grid_len);
  std::iota(o.positions.begin(), o.positions.end(), 0);
  return o;
}

GenerationOrder sample_order(std::size_t grid_len, Rng& rng, double raster_prob) {
  require(grid_len >= 1, ErrorKind::Config, "sample_order: empty grid");
  require(raster_prob >= 0 && raster_prob <= 1, ErrorKind::Config, "sample_order: raster_prob");
  auto order = GenerationOrder::identity(grid_len);
  // The draw is always consumed so the stream stays aligned across settings.
  const bool raster = rng.uniform() < raster_prob;
  if (!raster) rng.shuffle(order.positions.begin(), order.positions.end());
  return order;
}

GenerationOrder editing_order(const EditMask& mask) {
  GenerationOrder o;
  for (std::size_t i = 0; i < mask.patch.size(); ++i)
    if (mask.patch[i]) o.positions.push_back(int(i));
  return o;
}

namespace {

void push_text(SequenceLayout& lay, const TextTokens& text) {
  lay.text_len = text.ids.size();
  for (std::size_t i = 0; i < text.ids.size(); ++i) {
    lay.prefix_ids.push_back(text.ids[i]);
    lay.segment_tags.push_back(Segment::Text);
    lay.prefix_pos.push_back(int(i));
  }
}

void set_order(SequenceLayout& lay, const GenerationOrder& order) {
  lay.gen_order = order;
  lay.pe_index_per_step = order.positions;
}

}  // namespace

SequenceLayout build_pretrain_layout(const TextTokens& text, std::size_t grid_len,
                                     const GenerationOrder& order) {
  require(order.is_permutation_of(grid_len), ErrorKind::Layout,
          "pretrain layout: order is not a permutation of " + std::to_string(grid_len) + " positions");
  SequenceLayout lay;
  lay.grid_len = grid_len;
  push_text(lay, text);
  set_order(lay, order);
  return lay;
}

SequenceLayout build_pretrain_layout(const TextTokens& text, const TokenGrid& grid,
                                     const GenerationOrder& order) {
  auto lay = build_pretrain_layout(text, grid.size(), order);
  std::vector<int> teacher(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) teacher[i] = grid.ids[std::size_t(order.positions[i])];
  lay.teacher_ids = std::move(teacher);
  return lay;
}

SequenceLayout build_edit_layout(const TextTokens& text, const TokenGrid& source,
                                 const std::optional<EditMask>& mask,
                                 const std::optional<TokenGrid>& targets,
                                 const EditLayoutOptions& opts) {
  const std::size_t L = source.size();
  require(!mask || mask->patch.size() == L, ErrorKind::Layout, "edit layout: mask length != L");
  require(!targets || (targets->size() == L && targets->rows == source.rows && targets->cols == source.cols),
          ErrorKind::Layout, "edit layout: target grid shape mismatch");
  SequenceLayout lay;
  lay.grid_len = L;
  push_text(lay, text);

  GenerationOrder order;
  std::vector<std::uint8_t> edit_bits(L, 0);
  if (mask && mask->edit_count() > 0) {
    order = editing_order(*mask);
    edit_bits = mask->patch;
  } else {
    order = GenerationOrder::identity(L);
  }
  if (opts.order) {
    auto want = opts.order->positions;
    std::sort(want.begin(), want.end());
    require(want == order.positions, ErrorKind::Layout,
            "edit layout: order override is not a permutation of the edit positions");
    order = *opts.order;
  }

  for (std::size_t i = 0; i < L; ++i) {
    const bool withheld = opts.mask_previous && edit_bits[i];
    lay.prefix_ids.push_back(withheld ? kPlaceholderId : source.ids[i]);
    lay.segment_tags.push_back(Segment::Source);
    lay.prefix_pos.push_back(int(i));
  }
  for (std::size_t i = 0; i < L; ++i) {
    lay.prefix_ids.push_back(int(edit_bits[i] ? MaskSelector::Edit : MaskSelector::Unedit));
    lay.segment_tags.push_back(Segment::Mask);
    lay.prefix_pos.push_back(int(i));
  }
  set_order(lay, order);
  if (targets) {
    std::vector<int> teacher(order.size());
    for (std::size_t i = 0; i < order.size(); ++i)
      teacher[i] = targets->ids[std::size_t(order.positions[i])];
    lay.teacher_ids = std::move(teacher);
  }
  return lay;
}

}  // namespace nep
