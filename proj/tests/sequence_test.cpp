#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "nep/error.hpp"
#include "nep/sequence.hpp"

using namespace nep;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Undefined;
}

TokenGrid ramp_grid(std::size_t n) {
  TokenGrid g{std::vector<int>(n), 8, n / 8};
  for (std::size_t i = 0; i < n; ++i) g.ids[i] = int(i % 64);
  return g;
}

}  // namespace

TEST_CASE("text is left padded to a fixed length") {
  const auto t = encode_text("make the red square blue", 16);
  REQUIRE(t.ids.size() == 16);
  CHECK(std::count(t.ids.begin(), t.ids.begin() + 11, kPadId) == 11);
  CHECK(t.ids[11] != kPadId);
  CHECK(decode_text(t) == "make the red square blue");
  CHECK(encode_text("Make THE red, square blue!", 16) == t);
}

TEST_CASE("text errors are reported as input errors") {
  CHECK(kind_of([] { encode_text("make the teal square blue", 16); }) == ErrorKind::Input);
  CHECK(kind_of([] { encode_text("", 16); }) == ErrorKind::Input);
  CHECK(kind_of([] { encode_text("red red red red red", 4); }) == ErrorKind::Input);
  CHECK(encode_text("", 4, true).ids == std::vector<int>(4, kPadId));
}

TEST_CASE("sampled orders are permutations and raster with the given probability") {
  Rng rng(17);
  int raster = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const auto o = sample_order(64, rng, 0.1);
    CHECK(o.is_permutation_of(64));
    raster += o.is_strictly_increasing() ? 1 : 0;
  }
  const double p = double(raster) / n, sd = std::sqrt(0.1 * 0.9 / n);
  CHECK(std::fabs(p - 0.1) < 4 * sd);
  Rng r2(1);
  CHECK(sample_order(64, r2, 1.0).is_strictly_increasing());
}

TEST_CASE("sample_order is deterministic for a seed") {
  Rng a(42), b(42);
  CHECK(sample_order(64, a, 0.0).positions == sample_order(64, b, 0.0).positions);
}

TEST_CASE("pretraining layout pairs each step with its target position") {
  const auto text = encode_text("red square top left on black", 16);
  const auto grid = ramp_grid(64);
  Rng rng(3);
  const auto order = sample_order(64, rng, 0.0);
  const auto lay = build_pretrain_layout(text, grid, order);
  CHECK(lay.prefix_len() == 16);
  CHECK(lay.steps() == 64);
  CHECK_FALSE(lay.is_edit());
  REQUIRE(lay.teacher_ids.has_value());
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(lay.pe_index_per_step[i] == order.positions[i]);
    CHECK((*lay.teacher_ids)[i] == grid.ids[std::size_t(order.positions[i])]);
  }
  GenerationOrder bad{{0, 1, 1}};
  CHECK(kind_of([&] { build_pretrain_layout(text, 3, bad); }) == ErrorKind::Layout);
}

TEST_CASE("editing layout conditions on source and mask and generates edited positions") {
  TokenizerConfig cfg;
  const auto text = encode_text("make the red square blue", 16);
  const auto src = ramp_grid(64);
  auto tgt = src;
  std::vector<std::uint8_t> bits(64, 0);
  for (int p : {9, 10, 17, 18}) {
    bits[std::size_t(p)] = 1;
    tgt.ids[std::size_t(p)] = 3;
  }
  const auto mask = mask_from_patches(bits, cfg);
  const auto lay = build_edit_layout(text, src, mask, tgt);
  CHECK(lay.is_edit());
  CHECK(lay.prefix_len() == 16 + 64 + 64);
  CHECK(lay.gen_order.positions == std::vector<int>{9, 10, 17, 18});
  CHECK(*lay.teacher_ids == std::vector<int>{3, 3, 3, 3});
  for (std::size_t p = 0; p < 64; ++p) {
    CHECK(lay.prefix_ids[16 + p] == src.ids[p]);
    CHECK(lay.segment_tags[16 + p] == Segment::Source);
    CHECK(lay.prefix_ids[80 + p] == int(bits[p]));
    CHECK(lay.segment_tags[80 + p] == Segment::Mask);
    CHECK(lay.prefix_pos[80 + p] == int(p));
  }

  EditLayoutOptions opts;
  opts.mask_previous = true;
  const auto hidden = build_edit_layout(text, src, mask, tgt, opts);
  CHECK(hidden.prefix_ids[16 + 9] == kPlaceholderId);
  CHECK(hidden.prefix_ids[16 + 8] == src.ids[8]);

  opts.order = GenerationOrder{{18, 9, 17, 10}};
  const auto shuffled = build_edit_layout(text, src, mask, tgt, opts);
  CHECK(shuffled.pe_index_per_step == std::vector<int>{18, 9, 17, 10});
  opts.order = GenerationOrder{{18, 9, 17, 11}};
  CHECK(kind_of([&] { build_edit_layout(text, src, mask, tgt, opts); }) == ErrorKind::Layout);
}

TEST_CASE("missing or empty masks mean full regeneration in raster order") {
  TokenizerConfig cfg;
  const auto text = encode_text("no change", 16);
  const auto src = ramp_grid(64);
  const auto none = build_edit_layout(text, src, std::nullopt, std::nullopt);
  CHECK(none.steps() == 64);
  CHECK(none.gen_order.is_strictly_increasing());
  const auto empty = build_edit_layout(text, src, mask_from_patches(std::vector<std::uint8_t>(64, 0), cfg),
                                       std::nullopt);
  CHECK(empty.steps() == 64);
  CHECK_FALSE(empty.teacher_ids.has_value());
}

TEST_CASE("editing order lists edited positions ascending") {
  TokenizerConfig cfg;
  std::vector<std::uint8_t> bits(64, 0);
  bits[40] = bits[2] = bits[63] = 1;
  CHECK(editing_order(mask_from_patches(bits, cfg)).positions == std::vector<int>{2, 40, 63});
}
