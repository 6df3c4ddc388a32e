#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "nep/error.hpp"
#include "nep/scene.hpp"
#include "nep/tts.hpp"

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

Critic random_critic(std::uint64_t seed, bool identity = false) {
  CriticConfig cfg;
  cfg.identity_output = identity;
  Rng rng(seed);
  auto c = Critic::init(cfg, rng);
  // Nonzero biases so every parameter matters.
  c.visit([&](const std::string&, Tensor& t) {
    for (auto& x : t.data)
      if (x == 0) x = float(0.05 * rng.normal());
  });
  return c;
}

struct Prompt {
  TokenGrid grid;
  TextTokens text;
};

Prompt random_prompt(Rng& rng) {
  TokenizerConfig tok;
  const auto s = scene::random_scene(rng, 8, 8);
  auto g = scene::render_grid(s, tok);
  for (int j = 0; j < 6; ++j) g.ids[rng.below(64)] = int(rng.below(64));
  return {g, encode_text(scene::caption(s), 16)};
}

}  // namespace

TEST_CASE("grad-cam of a linear critic matches the closed form") {
  // With y = b0 + b.u + w.mean(A), dy/dA_ic = w_c / cells, so
  // alpha_c = w_c / cells and S_i = relu(sum_c w_c A_ic) / cells.
  TokenizerConfig tok;
  const auto c = random_critic(2, true);
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto pr = random_prompt(rng);
    const auto img = decode_tokens(pr.grid, tok);
    const auto tape = critic_forward(c, img, pr.text);
    const auto rep = grad_cam_scores(c, img, pr.text);
    const std::size_t C = c.cfg.channels, cells = tape.a.rows();

    std::vector<double> u(c.cfg.vocab_text, 0.0);
    double words = 0;
    for (int id : pr.text.ids)
      if (id != kPadId) {
        u[std::size_t(id)] += 1;
        words += 1;
      }
    for (auto& x : u) x /= words;
    std::vector<double> w(C);
    double y = c.head_b0.data[0];
    for (std::size_t v = 0; v < u.size(); ++v) y += u[v] * c.head_bt.data[v];
    for (std::size_t ch = 0; ch < C; ++ch) {
      w[ch] = c.head_w0.data[ch];
      for (std::size_t v = 0; v < u.size(); ++v) w[ch] += u[v] * c.head_wt.at(v, ch);
      double mean = 0;
      for (std::size_t i = 0; i < cells; ++i) mean += tape.a.at(i, ch);
      y += w[ch] * mean / double(cells);
    }
    CHECK(std::fabs(rep.score - y) <= 1e-5 * std::max(1.0, std::fabs(y)));
    double num = 0, den = 0;
    for (std::size_t ch = 0; ch < C; ++ch) {
      const double a = w[ch] / double(cells);
      num += (rep.alpha[ch] - a) * (rep.alpha[ch] - a);
      den += a * a;
    }
    CHECK(std::sqrt(num / den) < 1e-5);
    num = den = 0;
    for (std::size_t i = 0; i < cells; ++i) {
      double s = 0;
      for (std::size_t ch = 0; ch < C; ++ch) s += w[ch] * tape.a.at(i, ch);
      s = std::max(s, 0.0) / double(cells);
      num += (rep.saliency[i] - s) * (rep.saliency[i] - s);
      den += s * s;
    }
    CHECK(std::sqrt(num / std::max(den, 1e-300)) < 1e-5);
  }
}

TEST_CASE("critic gradients match central differences") {
  CriticConfig cfg;
  cfg.image_h = cfg.image_w = 8;
  cfg.hidden = 3;
  cfg.channels = 4;
  Rng rng(4);
  auto c = Critic::init(cfg, rng);
  c.visit([&](const std::string&, Tensor& t) {
    for (auto& x : t.data)
      if (x == 0) x = float(0.1 * rng.normal());
  });
  Image img(8, 8, 3);
  for (auto& p : img.pixels) p = std::uint8_t(rng.below(256));
  const TextTokens text = encode_text("red square top left", 16);
  const auto tape = critic_forward(c, img, text);
  auto g = c.zeros_like();
  critic_backward(c, tape, 1.0, g);

  std::vector<std::string> names;
  std::vector<Tensor*> params, grads;
  c.visit([&](const std::string& n, Tensor& t) {
    names.push_back(n);
    params.push_back(&t);
  });
  g.visit([&](const std::string&, Tensor& t) { grads.push_back(&t); });
  for (std::size_t k = 0; k < params.size(); ++k) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < params[k]->size(); ++i) {
      float& x = params[k]->data[i];
      const float orig = x;
      // Small step: ReLU kinks sit close to some pre-activations.
      const float h = 1e-4f;
      x = orig + h;
      const double yp = critic_forward(c, img, text).z;
      x = orig - h;
      const double ym = critic_forward(c, img, text).z;
      x = orig;
      // Chain through the sigmoid at the unperturbed point.
      const double fd = (yp - ym) / (2.0 * h) * tape.y * (1.0 - tape.y);
      const double an = grads[k]->data[i];
      num += (fd - an) * (fd - an);
      den += fd * fd + an * an;
    }
    INFO(names[k]);
    if (den > 0) CHECK(std::sqrt(num / den) < 1e-2);
  }
}

TEST_CASE("propose_revision returns the K least salient cells, ties to lower index") {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    GradCamReport rep;
    rep.saliency.resize(64);
    for (auto& s : rep.saliency) s = double(rng.below(5));  // many ties
    const std::size_t k = rng.below(65);
    const auto got = propose_revision(rep, k);
    std::vector<std::pair<double, int>> all;
    for (int i = 0; i < 64; ++i) all.push_back({rep.saliency[std::size_t(i)], i});
    std::sort(all.begin(), all.end());
    std::vector<int> want;
    for (std::size_t i = 0; i < k; ++i) want.push_back(all[i].second);
    std::sort(want.begin(), want.end());
    CHECK(got == want);
  }
  GradCamReport rep;
  rep.saliency.assign(64, 0.0);
  CHECK(propose_revision(rep, 0).empty());
  CHECK_THROWS_AS(propose_revision(rep, 65), Error);
}

TEST_CASE("K = 0 rejects and leaves the grid bit-identical") {
  TokenizerConfig tok;
  const auto critic = random_critic(6);
  Rng rng(7);
  const auto pr = random_prompt(rng);
  RefineConfig cfg;
  cfg.k = 0;
  const auto step = refine_once(edit_model(), critic, tok, pr.grid, pr.text, cfg, rng);
  CHECK_FALSE(step.accepted);
  CHECK(step.grid.ids == pr.grid.ids);
  CHECK(step.decode_steps == 0);
}

TEST_CASE("a constant critic never accepts") {
  TokenizerConfig tok;
  auto critic = random_critic(8);
  critic.visit([](const std::string& n, Tensor& t) {
    if (n != "head.b0") t.zero();
  });
  Rng rng(9);
  RefineConfig cfg;
  cfg.rounds = 3;
  for (int t = 0; t < 5; ++t) {
    const auto pr = random_prompt(rng);
    const auto traj = refine_loop(edit_model(), critic, tok, pr.grid, pr.text, cfg, rng);
    REQUIRE(traj.size() == 4);
    for (std::size_t r = 1; r < traj.size(); ++r) {
      CHECK_FALSE(traj[r].accepted);
      CHECK(traj[r].grid.ids == pr.grid.ids);
    }
  }
}

TEST_CASE("accepted rewards never decrease and accepted grids are the best candidates") {
  TokenizerConfig tok;
  const auto critic = random_critic(10);
  Rng rng(11);
  RefineConfig cfg;
  cfg.k = 12;
  cfg.candidates = 3;
  cfg.rounds = 4;
  for (int t = 0; t < 6; ++t) {
    const auto pr = random_prompt(rng);
    const auto traj = refine_loop(edit_model(), critic, tok, pr.grid, pr.text, cfg, rng);
    CHECK(traj[0].accepted);
    for (std::size_t r = 1; r < traj.size(); ++r) {
      CHECK(traj[r].reward >= traj[r - 1].reward);
      CHECK(traj[r].decode_steps == cfg.k * cfg.candidates);
      const double best = *std::max_element(traj[r].candidate_scores.begin(), traj[r].candidate_scores.end());
      if (traj[r].accepted) {
        CHECK(traj[r].reward == best);
        CHECK(best > traj[r - 1].reward);
        CHECK(critic_score(critic, decode_tokens(traj[r].grid, tok), pr.text) == traj[r].reward);
      } else {
        CHECK(best <= traj[r - 1].reward);
        CHECK(traj[r].grid.ids == traj[r - 1].grid.ids);
      }
      // Only revision positions may change.
      for (std::size_t p = 0; p < 64; ++p)
        if (std::find(traj[r].revision.begin(), traj[r].revision.end(), int(p)) == traj[r].revision.end())
          CHECK(traj[r].grid.ids[p] == traj[r - 1].grid.ids[p]);
    }
  }
}

TEST_CASE("parallel candidates give the serial result") {
  TokenizerConfig tok;
  const auto critic = random_critic(12);
  Rng rng(13);
  const auto pr = random_prompt(rng);
  RefineConfig cfg;
  cfg.rounds = 3;
  Rng a(14), b(14);
  const auto serial = refine_loop(edit_model(), critic, tok, pr.grid, pr.text, cfg, a);
  cfg.parallel = true;
  const auto parallel = refine_loop(edit_model(), critic, tok, pr.grid, pr.text, cfg, b);
  for (std::size_t r = 0; r < serial.size(); ++r) {
    CHECK(serial[r].grid.ids == parallel[r].grid.ids);
    CHECK(serial[r].candidate_scores == parallel[r].candidate_scores);
  }
}

TEST_CASE("critic training lowers the error and checkpoints round trip") {
  TokenizerConfig tok;
  const auto data = make_critic_samples(300, 15, tok, 16);
  const auto again = make_critic_samples(300, 15, tok, 16);
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(data[i].score >= 0.0);
    CHECK(data[i].score <= 1.0);
    CHECK(data[i].image == again[i].image);
    CHECK(data[i].score == again[i].score);
  }
  Rng rng(16);
  auto c = Critic::init(CriticConfig{}, rng);
  const double before = critic_mse(c, data);
  CriticTrainConfig tc;
  tc.steps = 150;
  train_critic(c, data, tc);
  CHECK(critic_mse(c, data) < before);

  const auto path = std::filesystem::temp_directory_path() / "nep_tts_test_critic.bin";
  save_critic(c, path);
  const auto back = load_critic(path);
  for (int i = 0; i < 10; ++i) CHECK(critic_score(back, data[i].image, data[i].text) == critic_score(c, data[i].image, data[i].text));
  CHECK(back.cfg.to_json() == c.cfg.to_json());
}
