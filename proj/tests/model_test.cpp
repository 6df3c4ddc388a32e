#include "doctest.h"

#include <cmath>
#include <cstring>

#include "nep/error.hpp"
#include "nep/model.hpp"

using namespace nep;

namespace {

ModelConfig tiny(bool random_order = true, bool edit = false) {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.ffn_dim = 24;
  c.grid_len = 16;
  c.text_len = 6;
  c.random_order = random_order;
  c.edit_extension = edit;
  return c;
}

TokenGrid random_grid(Rng& rng, std::size_t rows, std::size_t cols) {
  TokenGrid g{std::vector<int>(rows * cols), rows, cols};
  for (auto& id : g.ids) id = int(rng.below(64));
  return g;
}

std::size_t expected_total(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  std::size_t n = d * (c.vocab_text + c.vocab_image + c.text_len + 3);
  n += c.n_layers * (4 * d * d + 2 * d + 2 * d * c.ffn_dim);
  n += d + d * c.vocab_image;
  if (c.random_order) n += c.grid_len * d + d;
  if (c.edit_extension) n += 2 * d;
  return n;
}

SequenceLayout edit_layout(Rng& rng, bool mask_previous) {
  TokenizerConfig tk;
  tk.image_h = tk.image_w = 16;
  const auto src = random_grid(rng, 4, 4), tgt = random_grid(rng, 4, 4);
  std::vector<std::uint8_t> bits(16, 0);
  for (int p : {1, 5, 6, 11, 12}) bits[std::size_t(p)] = 1;
  EditLayoutOptions o;
  o.mask_previous = mask_previous;
  return build_edit_layout(encode_text("make the red square blue", 6), src, mask_from_patches(bits, tk), tgt, o);
}

}  // namespace

TEST_CASE("parameter counts match an independent shape formula") {
  for (bool ro : {false, true})
    for (bool ed : {false, true}) {
      if (ed && !ro) continue;
      const auto cfg = tiny(ro, ed);
      Rng rng(1);
      const auto p = ModelParams::init(cfg, rng);
      CHECK(count_params(p).total == expected_total(cfg));
      CHECK(count_params(cfg).total == expected_total(cfg));
    }
  const auto base = count_params(tiny(true, false)).total, ext = count_params(tiny(true, true)).total;
  CHECK(ext - base == 2 * 16);
  CHECK(count_params(tiny(true, false)).total - count_params(tiny(false, false)).total == 16 * 16 + 16);
}

TEST_CASE("adding the edit extension keeps pretrained tensors") {
  Rng rng(4);
  auto p = ModelParams::init(tiny(), rng);
  const auto head = p.head.data;
  p.add_edit_extension(rng);
  CHECK(p.cfg.edit_extension);
  CHECK(p.head.data == head);
  CHECK(p.e_emb.size() == 16);
}

TEST_CASE("cached decoding reproduces teacher-forced logits") {
  Rng rng(8);
  auto p = ModelParams::init(tiny(true, true), rng);
  const auto grid = random_grid(rng, 4, 4);
  const auto text = encode_text("red square top left on black", 6);
  std::vector<SequenceLayout> layouts = {
      build_pretrain_layout(text, grid, sample_order(16, rng, 0.0)),
      edit_layout(rng, false),
      edit_layout(rng, true),
  };
  for (const auto& lay : layouts) {
    const auto full = forward_train(p, lay);
    for (std::size_t forced : {std::size_t(0), std::size_t(2)}) {
      DecodeSession s(p, lay);
      auto logits = s.prefill(forced);
      for (std::size_t step = forced; step < lay.steps(); ++step) {
        REQUIRE(logits.size() == 64);
        double err = 0;
        for (std::size_t v = 0; v < 64; ++v) err = std::max(err, double(std::fabs(logits[v] - full.logits.at(step, v))));
        CHECK(err <= 1e-5);
        logits = s.advance((*lay.teacher_ids)[step]);
      }
      CHECK(logits.empty());
    }
  }
}

TEST_CASE("raster-only model decodes the first token from the last text row") {
  Rng rng(9);
  auto p = ModelParams::init(tiny(false, false), rng);
  const auto grid = random_grid(rng, 4, 4);
  const auto text = encode_text("blue bar on gray", 6);
  const auto lay = build_pretrain_layout(text, grid, GenerationOrder::identity(16));
  const auto full = forward_train(p, lay);
  DecodeSession s(p, lay);
  auto logits = s.prefill(0);
  for (std::size_t v = 0; v < 64; ++v) CHECK(logits[v] == doctest::Approx(full.logits.at(0, v)).epsilon(1e-5));
  Rng r2(1);
  const auto perm = build_pretrain_layout(text, grid, sample_order(16, r2, 0.0));
  CHECK_THROWS_AS(forward_train(p, perm), Error);
}

TEST_CASE("layouts the model cannot represent are configuration errors") {
  Rng rng(10);
  auto plain = ModelParams::init(tiny(true, false), rng);
  const auto lay = edit_layout(rng, false);
  try {
    forward_train(plain, lay);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
}

TEST_CASE("model gradients match finite differences on sampled coordinates") {
  Rng rng(12);
  auto p = ModelParams::init(tiny(true, true), rng);
  // larger weights so that gradients are not tiny, small enough to keep softmax smooth
  p.visit([&](const std::string&, Tensor& t) {
    for (auto& v : t.data) v *= 2.0f;
  });
  const auto lay = edit_layout(rng, true);
  auto grads = p.zeros_like();
  forward_train(p, lay, &grads);
  double diff = 0, na = 0;
  const double h = 1e-2;
  p.visit([&](const std::string& name, Tensor& t) {
    const Tensor* g = nullptr;
    grads.visit([&](const std::string& n2, const Tensor& gt) {
      if (n2 == name) g = &gt;
    });
    for (int k = 0; k < 6; ++k) {
      const std::size_t i = rng.below(t.size());
      const float saved = t.data[i];
      t.data[i] = float(saved + h);
      const double lp = forward_train(p, lay).loss;
      t.data[i] = float(saved - h);
      const double lm = forward_train(p, lay).loss;
      t.data[i] = saved;
      const double num = (lp - lm) / (2 * h);
      diff += (num - g->data[i]) * (num - g->data[i]);
      na += double(g->data[i]) * g->data[i];
    }
  });
  const double rel = std::sqrt(diff / na);
  INFO("rel=", rel);
  CHECK(rel < 1e-2);
}

TEST_CASE("greedy sampling breaks ties toward the lowest id") {
  Rng rng(1);
  SamplerConfig greedy;
  greedy.greedy = true;
  std::vector<float> l = {0.5f, 2.0f, 2.0f, -1.0f};
  CHECK(sample_token(l, greedy, rng) == 1);
  SamplerConfig top1;
  top1.top_k = 1;
  for (int i = 0; i < 20; ++i) CHECK(sample_token(l, top1, rng) == 1);
}

TEST_CASE("temperature sampling follows the softmax distribution") {
  Rng rng(2);
  SamplerConfig s;
  std::vector<float> l = {0.0f, std::log(3.0f)};
  int ones = 0;
  const int n = 8000;
  for (int i = 0; i < n; ++i) ones += sample_token(l, s, rng);
  CHECK(double(ones) / n == doctest::Approx(0.75).epsilon(0.03));
}

TEST_CASE("decoding is deterministic and guidance of one changes nothing") {
  Rng init(13);
  auto p = ModelParams::init(tiny(true, true), init);
  const auto lay = edit_layout(init, false);
  SamplerConfig s;
  Rng a(5), b(5), c(5);
  const auto x = decode(p, lay, s, a), y = decode(p, lay, s, b);
  CHECK(x.tokens == y.tokens);
  CHECK(x.tokens.size() == lay.steps());
  s.guidance = 1.0f;
  const auto z = decode(p, lay, s, c);
  CHECK(z.tokens == x.tokens);
}
