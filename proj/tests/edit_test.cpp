#include "doctest.h"

#include "nep/edit.hpp"
#include "nep/error.hpp"

using namespace nep;

namespace {

const ModelParams& edit_model() {
  static const auto p = [] {
    ModelConfig c;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.ffn_dim = 32;
    Rng rng(1);
    auto m = ModelParams::init(c, rng);
    m.add_edit_extension(rng);
    return m;
  }();
  return p;
}

Image noise_image(Rng& rng, const TokenizerConfig& tok) {
  Image img(tok.image_h, tok.image_w, 3);
  for (auto& p : img.pixels) p = std::uint8_t(rng.below(256));
  return img;
}

// Random rectangle of pixels, possibly not aligned to patches.
Image rect_mask(Rng& rng, const TokenizerConfig& tok) {
  Image m(tok.image_h, tok.image_w, 1);
  const std::size_t y0 = rng.below(tok.image_h), x0 = rng.below(tok.image_w);
  const std::size_t y1 = y0 + 1 + rng.below(tok.image_h - y0), x1 = x0 + 1 + rng.below(tok.image_w - x0);
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) *m.at(y, x) = 255;
  return m;
}

}  // namespace

TEST_CASE("pixels outside mask-covered patches are byte-identical") {
  TokenizerConfig tok;
  Rng rng(2);
  for (int t = 0; t < 60; ++t) {
    EditRequest req{noise_image(rng, tok), rect_mask(rng, tok), "make the red square blue", {}, rng.next_u64(),
                    t % 2 == 0};
    const auto res = nep_edit(edit_model(), tok, req);
    const auto m = patchify_mask(*req.mask, tok);
    for (std::size_t y = 0; y < tok.image_h; ++y)
      for (std::size_t x = 0; x < tok.image_w; ++x) {
        if (m.patch[(y / tok.patch) * tok.cols() + x / tok.patch]) continue;
        for (int c = 0; c < 3; ++c) REQUIRE(res.image.at(y, x)[c] == req.source.at(y, x)[c]);
      }
    CHECK_FALSE(res.full_regeneration);
  }
}

TEST_CASE("decode steps equal the number of edited positions") {
  TokenizerConfig tok;
  Rng rng(3);
  for (int t = 0; t < 30; ++t) {
    EditRequest req{noise_image(rng, tok), rect_mask(rng, tok), "add a blue circle", {}, 7, false};
    const auto res = nep_edit(edit_model(), tok, req);
    const auto m = patchify_mask(*req.mask, tok);
    CHECK(res.l_e == m.edit_count());
    CHECK(res.steps == res.l_e);
    CHECK(res.positions == editing_order(m).positions);
    CHECK(res.logprobs.size() == res.steps);
    const auto src = encode_image(req.source, tok);
    for (std::size_t p = 0; p < src.size(); ++p)
      if (!m.patch[p]) CHECK(res.grid.ids[p] == src.ids[p]);
  }
}

TEST_CASE("no mask or an empty mask regenerates the whole grid") {
  TokenizerConfig tok;
  Rng rng(4);
  const auto src = noise_image(rng, tok);
  for (auto mask : {std::optional<Image>{}, std::optional<Image>{Image(32, 32, 1)}}) {
    const auto res = nep_edit(edit_model(), tok, {src, mask, "red square top left on black", {}, 5, false});
    CHECK(res.full_regeneration);
    CHECK(res.steps == tok.grid_len());
    CHECK(GenerationOrder{res.positions}.is_strictly_increasing());
    CHECK(res.image == decode_tokens(res.grid, tok));
  }
}

TEST_CASE("bad requests are input errors") {
  TokenizerConfig tok;
  Rng rng(5);
  const auto src = noise_image(rng, tok);
  auto expect_input = [&](const EditRequest& r) {
    try {
      nep_edit(edit_model(), tok, r);
      FAIL("expected an input error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Input);
    }
  };
  expect_input({src, Image(16, 16, 1), "make the blue circle red", {}, 0, false});
  expect_input({src, rect_mask(rng, tok), "make it teal", {}, 0, false});
  expect_input({Image(16, 16, 3), std::nullopt, "make the blue circle red", {}, 0, false});
}

TEST_CASE("edits are reproducible from the seed") {
  TokenizerConfig tok;
  Rng rng(6);
  const EditRequest req{noise_image(rng, tok), rect_mask(rng, tok), "remove the green bar", {}, 99, false};
  const auto a = nep_edit(edit_model(), tok, req), b = nep_edit(edit_model(), tok, req);
  CHECK(a.image == b.image);
  CHECK(a.logprob_sum == b.logprob_sum);
}

TEST_CASE("zero-shot editing keeps the kept positions") {
  Rng rng(7);
  ModelConfig c = edit_model().cfg;
  c.edit_extension = false;
  auto p = ModelParams::init(c, rng);
  TokenGrid src{std::vector<int>(64), 8, 8};
  for (auto& id : src.ids) id = int(rng.below(64));
  const auto text = encode_text("blue circle", 16);
  SamplerConfig greedy;
  greedy.greedy = true;

  std::vector<int> all(64);
  for (int i = 0; i < 64; ++i) all[std::size_t(i)] = i;
  const auto keep_all = zero_shot_edit(p, src, all, text, greedy, rng);
  CHECK(keep_all.steps == 0);
  CHECK(keep_all.grid.ids == src.ids);

  const auto keep_none = zero_shot_edit(p, src, {}, text, greedy, rng);
  CHECK(keep_none.steps == 64);
  CHECK(keep_none.full_regeneration);

  const std::vector<int> keep = {0, 3, 9, 40, 63};
  const auto some = zero_shot_edit(p, src, keep, text, greedy, rng);
  CHECK(some.steps == 59);
  for (int k : keep) CHECK(some.grid.ids[std::size_t(k)] == src.ids[std::size_t(k)]);
  CHECK_THROWS_AS(zero_shot_edit(p, src, {3, 3}, text, greedy, rng), Error);
  CHECK_THROWS_AS(zero_shot_edit(p, src, {64}, text, greedy, rng), Error);
}

TEST_CASE("multi-turn editing chains outputs and preserves earlier turns outside later masks") {
  TokenizerConfig tok;
  Rng rng(8);
  const auto src = noise_image(rng, tok);
  auto block = [&](std::size_t r0, std::size_t c0) {
    std::vector<std::uint8_t> bits(64, 0);
    for (std::size_t r = r0; r < r0 + 2; ++r)
      for (std::size_t c = c0; c < c0 + 2; ++c) bits[r * 8 + c] = 1;
    return mask_image(mask_from_patches(bits, tok), tok);
  };
  SamplerConfig s;
  const std::vector<EditTurn> disjoint = {{block(0, 0), "make the red square blue"}, {block(5, 5), "make the blue circle red"}};
  const auto out = multi_turn_edit(edit_model(), tok, src, disjoint, s, 3);
  REQUIRE(out.size() == 2);
  const auto m2 = patchify_mask(*disjoint[1].mask, tok);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x)
      if (!m2.patch[(y / 4) * 8 + x / 4])
        for (int c = 0; c < 3; ++c) REQUIRE(out[1].image.at(y, x)[c] == out[0].image.at(y, x)[c]);
  // The second turn is exactly a single edit of the first turn's output.
  const Rng base(3, 0x7475726e);
  const auto replay = nep_edit(edit_model(), tok, {out[0].image, disjoint[1].mask, "make the blue circle red", s, base.fork(1).next_u64(), false});
  CHECK(replay.image == out[1].image);

  const std::vector<EditTurn> overlap = {{block(2, 2), "make the red square blue"}, {block(3, 3), "make the blue circle red"}};
  const auto ov = multi_turn_edit(edit_model(), tok, src, overlap, s, 4);
  const auto g0 = encode_image(ov[0].image, tok), g1 = ov[1].grid;
  for (std::size_t p = 0; p < 64; ++p)
    if (!patchify_mask(*overlap[1].mask, tok).patch[p]) CHECK(g1.ids[p] == g0.ids[p]);
  CHECK_THROWS_AS(multi_turn_edit(edit_model(), tok, src, {}, s, 0), Error);
}
