#include "nep/tts.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "nep/error.hpp"
#include "nep/nn/conv.hpp"
#include "nep/nn/optim.hpp"
#include "nep/scene.hpp"

namespace nep {

using nlohmann::json;

namespace {

constexpr std::size_t kInputChannels = 5;

nn::ConvShape conv1_shape(const CriticConfig& c) {
  return {c.image_h, c.image_w, kInputChannels, 3, 1, 1, c.hidden};
}

nn::ConvShape conv2_shape(const CriticConfig& c) {
  return {c.image_h, c.image_w, c.hidden, c.patch, c.patch, 0, c.channels};
}

}  // namespace

void CriticConfig::validate() const {
  require(patch > 0 && image_h % patch == 0 && image_w % patch == 0, ErrorKind::Config,
          "critic: image size not divisible by patch");
  require(hidden > 0 && channels > 0 && vocab_text > 0, ErrorKind::Config, "critic: zero width");
}

json CriticConfig::to_json() const {
  return {{"image_h", image_h},   {"image_w", image_w},         {"patch", patch},
          {"hidden", hidden},     {"channels", channels},       {"vocab_text", vocab_text},
          {"identity_output", identity_output}};
}

CriticConfig CriticConfig::from_json(const json& j) {
  CriticConfig c;
  c.image_h = j.at("image_h");
  c.image_w = j.at("image_w");
  c.patch = j.at("patch");
  c.hidden = j.at("hidden");
  c.channels = j.at("channels");
  c.vocab_text = j.at("vocab_text");
  c.identity_output = j.value("identity_output", false);
  c.validate();
  return c;
}

Critic Critic::init(const CriticConfig& cfg, Rng& rng) {
  cfg.validate();
  Critic c;
  c.cfg = cfg;
  const auto s1 = conv1_shape(cfg), s2 = conv2_shape(cfg);
  c.conv1_w = Tensor({s1.patch(), cfg.hidden});
  c.conv1_w.fill_normal(rng, std::sqrt(2.0 / double(s1.patch())));
  c.conv1_b = Tensor({cfg.hidden});
  c.conv2_w = Tensor({s2.patch(), cfg.channels});
  c.conv2_w.fill_normal(rng, std::sqrt(2.0 / double(s2.patch())));
  c.conv2_b = Tensor({cfg.channels});
  c.head_b0 = Tensor({1});
  c.head_bt = Tensor({cfg.vocab_text});
  c.head_wt = Tensor({cfg.vocab_text, cfg.channels});
  c.head_wt.fill_normal(rng, 0.1);
  c.head_w0 = Tensor({cfg.channels});
  c.head_w0.fill_normal(rng, 0.1);
  return c;
}

Critic Critic::zeros_like() const {
  Critic z = *this;
  z.visit([](const std::string&, Tensor& t) { t.zero(); });
  return z;
}

void Critic::visit(const std::function<void(const std::string&, Tensor&)>& f) {
  f("conv1.b", conv1_b);
  f("conv1.w", conv1_w);
  f("conv2.b", conv2_b);
  f("conv2.w", conv2_w);
  f("head.b0", head_b0);
  f("head.bt", head_bt);
  f("head.w0", head_w0);
  f("head.wt", head_wt);
}

void Critic::visit(const std::function<void(const std::string&, const Tensor&)>& f) const {
  const_cast<Critic*>(this)->visit([&](const std::string& n, Tensor& t) { f(n, t); });
}

CriticTape critic_forward(const Critic& c, const Image& img, const TextTokens& text) {
  const auto& cfg = c.cfg;
  require(img.height == cfg.image_h && img.width == cfg.image_w && img.channels == 3, ErrorKind::Input,
          "critic: image size mismatch");
  CriticTape t;
  t.x = Tensor({cfg.image_h * cfg.image_w * kInputChannels});
  for (std::size_t y = 0; y < cfg.image_h; ++y)
    for (std::size_t x = 0; x < cfg.image_w; ++x) {
      float* dst = t.x.ptr() + (y * cfg.image_w + x) * kInputChannels;
      const std::uint8_t* src = img.pixels.data() + (y * cfg.image_w + x) * 3;
      for (int ch = 0; ch < 3; ++ch) dst[ch] = float(src[ch]) / 255.0f;
      dst[3] = float(y) / float(cfg.image_h - 1);
      dst[4] = float(x) / float(cfg.image_w - 1);
    }
  nn::conv2d_forward(t.x, c.conv1_w, c.conv1_b, conv1_shape(cfg), t.h1_pre, t.cols1);
  nn::relu_forward(t.h1_pre, t.h1);
  t.h1.dims = {t.h1.size()};
  nn::conv2d_forward(t.h1, c.conv2_w, c.conv2_b, conv2_shape(cfg), t.a_pre, t.cols2);
  nn::relu_forward(t.a_pre, t.a);
  nn::avg_pool_forward(t.a, t.pooled);

  t.bow.assign(cfg.vocab_text, 0.0);
  std::size_t words = 0;
  for (int id : text.ids)
    if (id != kPadId) {
      require(id > 0 && std::size_t(id) < cfg.vocab_text, ErrorKind::Input, "critic: text id out of range");
      t.bow[std::size_t(id)] += 1.0;
      ++words;
    }
  if (words)
    for (auto& b : t.bow) b /= double(words);

  const std::size_t C = cfg.channels;
  t.w.assign(C, 0.0);
  double z = c.head_b0.data[0];
  for (std::size_t v = 0; v < cfg.vocab_text; ++v) {
    if (t.bow[v] == 0) continue;
    z += t.bow[v] * c.head_bt.data[v];
    for (std::size_t ch = 0; ch < C; ++ch) t.w[ch] += t.bow[v] * c.head_wt.at(v, ch);
  }
  for (std::size_t ch = 0; ch < C; ++ch) {
    t.w[ch] += c.head_w0.data[ch];
    z += t.w[ch] * t.pooled.data[ch];
  }
  t.z = z;
  t.y = cfg.identity_output ? z : nn::sigmoid(z);
  return t;
}

double critic_score(const Critic& c, const Image& img, const TextTokens& text) {
  return critic_forward(c, img, text).y;
}

namespace {

double dz_of(const Critic& c, const CriticTape& t, double dy) {
  return c.cfg.identity_output ? dy : dy * t.y * (1.0 - t.y);
}

// d(loss)/dA for a given d(loss)/dy.
Tensor feature_grad(const Critic& c, const CriticTape& t, double dy) {
  const double dz = dz_of(c, t, dy);
  Tensor dpooled({c.cfg.channels});
  for (std::size_t ch = 0; ch < c.cfg.channels; ++ch) dpooled.data[ch] = float(dz * t.w[ch]);
  Tensor da(t.a.dims);
  nn::avg_pool_backward(dpooled, t.a.rows(), da);
  return da;
}

}  // namespace

void critic_backward(const Critic& c, const CriticTape& t, double dy, Critic& g) {
  const auto& cfg = c.cfg;
  const double dz = dz_of(c, t, dy);
  const std::size_t C = cfg.channels;
  g.head_b0.data[0] += float(dz);
  for (std::size_t ch = 0; ch < C; ++ch) {
    const double dw = dz * t.pooled.data[ch];
    g.head_w0.data[ch] += float(dw);
    for (std::size_t v = 0; v < cfg.vocab_text; ++v)
      if (t.bow[v] != 0) g.head_wt.at(v, ch) += float(dw * t.bow[v]);
  }
  for (std::size_t v = 0; v < cfg.vocab_text; ++v) g.head_bt.data[v] += float(dz * t.bow[v]);

  const Tensor da = feature_grad(c, t, dy);
  Tensor da_pre(da.dims), dh1(t.h1.dims), dh1_pre(t.h1_pre.dims);
  nn::relu_backward(t.a_pre, da, da_pre);
  nn::conv2d_backward(t.cols2, c.conv2_w, conv2_shape(cfg), da_pre, &dh1, &g.conv2_w, &g.conv2_b);
  dh1.dims = t.h1_pre.dims;
  nn::relu_backward(t.h1_pre, dh1, dh1_pre);
  nn::conv2d_backward(t.cols1, c.conv1_w, conv1_shape(cfg), dh1_pre, static_cast<Tensor*>(nullptr), &g.conv1_w,
                      &g.conv1_b);
}

GradCamReport grad_cam_scores(const Critic& c, const Image& img, const TextTokens& text) {
  const auto t = critic_forward(c, img, text);
  const Tensor da = feature_grad(c, t, 1.0);
  const std::size_t cells = t.a.rows(), C = t.a.cols();
  GradCamReport r;
  r.score = t.y;
  r.alpha.assign(C, 0.0);
  for (std::size_t i = 0; i < cells; ++i)
    for (std::size_t ch = 0; ch < C; ++ch) r.alpha[ch] += da.at(i, ch);
  for (auto& a : r.alpha) a /= double(cells);
  r.saliency.assign(cells, 0.0);
  for (std::size_t i = 0; i < cells; ++i) {
    double s = 0;
    for (std::size_t ch = 0; ch < C; ++ch) s += r.alpha[ch] * t.a.at(i, ch);
    r.saliency[i] = std::max(s, 0.0);
  }
  return r;
}

std::vector<int> propose_revision(const GradCamReport& report, std::size_t k) {
  const std::size_t L = report.saliency.size();
  require(k <= L, ErrorKind::Config, "propose_revision: K > L");
  std::vector<int> idx(L);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return report.saliency[std::size_t(a)] < report.saliency[std::size_t(b)];
  });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<CriticSample> make_critic_samples(std::size_t count, std::uint64_t seed, const TokenizerConfig& tok,
                                              std::size_t text_len) {
  const Rng base(seed, 0x63726974);
  const int rows = int(tok.rows()), cols = int(tok.cols());
  std::vector<CriticSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = base.fork(i);
    auto s = scene::random_scene(rng, rows, cols);
    const auto facts = scene::facts_of(s);
    std::string cap = scene::caption(s);
    auto shown = s;
    TokenGrid grid;
    const auto kind = rng.below(6);
    if (kind == 1 || kind == 2) {  // recolor or move one object
      auto& o = shown.objects[rng.below(shown.objects.size())];
      if (kind == 1)
        o.color = scene::Color(rng.below(scene::kColorCount));
      else {
        o.row = int(rng.below(std::uint64_t(rows - 1)));
        o.col = int(rng.below(std::uint64_t(cols - o.size + 1)));
      }
    } else if (kind == 3) {  // drop one object
      shown.objects.erase(shown.objects.begin() + std::ptrdiff_t(rng.below(shown.objects.size())));
    } else if (kind == 4) {  // caption of another scene
      cap = scene::caption(scene::random_scene(rng, rows, cols));
    }
    grid = scene::render_grid(shown, tok);
    if (kind == 5 || rng.bernoulli(0.3)) {  // token noise
      const std::size_t n = 1 + rng.below(12);
      for (std::size_t j = 0; j < n; ++j) {
        const auto p = rng.below(grid.size());
        if (rng.bernoulli(0.5) && !s.objects.empty()) {
          const auto c = scene::rgb(s.objects[rng.below(s.objects.size())].color);
          grid.ids[p] = nearest_palette_id(c.r, c.g, c.b, tok.palette);
        } else {
          grid.ids[p] = int(rng.below(tok.vocab()));
        }
      }
    }
    const auto parsed = scene::parse_caption(cap);
    const double score = scene::scene_match_score(grid, parsed ? *parsed : facts, tok);
    out.push_back({decode_tokens(grid, tok), encode_text(cap, text_len), score});
  }
  return out;
}

double critic_mse(const Critic& c, const std::vector<CriticSample>& data) {
  double s = 0;
  for (const auto& d : data) {
    const double e = critic_score(c, d.image, d.text) - d.score;
    s += e * e;
  }
  return s / double(std::max<std::size_t>(data.size(), 1));
}

std::vector<double> train_critic(Critic& c, const std::vector<CriticSample>& data, const CriticTrainConfig& cfg) {
  require(!data.empty(), ErrorKind::Config, "train_critic: empty dataset");
  nn::OptimizerConfig opt;
  opt.lr = cfg.lr;
  opt.beta2 = 0.999f;
  opt.validate();
  Critic grads = c.zeros_like(), m = c.zeros_like(), v = c.zeros_like();
  Rng rng(cfg.seed, 0x63747261);
  std::vector<double> losses;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    double loss = 0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const auto& d = data[rng.below(data.size())];
      const auto t = critic_forward(c, d.image, d.text);
      const double e = t.y - d.score;
      loss += e * e;
      critic_backward(c, t, 2.0 * e / double(cfg.batch_size), grads);
    }
    loss /= double(cfg.batch_size);
    require(std::isfinite(loss), ErrorKind::NonFinite, "non-finite critic loss at step " + std::to_string(step));
    std::vector<Tensor*> p, g, mm, vv;
    c.visit([&](const std::string&, Tensor& t) { p.push_back(&t); });
    grads.visit([&](const std::string&, Tensor& t) { g.push_back(&t); });
    m.visit([&](const std::string&, Tensor& t) { mm.push_back(&t); });
    v.visit([&](const std::string&, Tensor& t) { vv.push_back(&t); });
    for (std::size_t i = 0; i < p.size(); ++i) {
      nn::adamw_step(p[i]->data, g[i]->data, mm[i]->data, vv[i]->data, opt, long(step));
      g[i]->zero();
    }
    losses.push_back(loss);
  }
  return losses;
}

void save_critic(const Critic& c, const std::filesystem::path& path) {
  TensorFile f;
  f.header = {{"kind", "critic"}, {"critic", c.cfg.to_json()}};
  c.visit([&](const std::string& n, const Tensor& t) { f.tensors.emplace_back(n, t); });
  write_tensor_file(path, f);
}

Critic load_critic(const std::filesystem::path& path) {
  auto f = read_tensor_file(path);
  require(f.header.value("kind", "") == "critic", ErrorKind::Corruption, "not a critic checkpoint");
  Critic c;
  c.cfg = CriticConfig::from_json(f.header.at("critic"));
  Rng rng(0);
  c = Critic::init(c.cfg, rng);
  std::size_t matched = 0;
  c.visit([&](const std::string& n, Tensor& t) {
    for (auto& [name, tensor] : f.tensors)
      if (name == n) {
        require(tensor.dims == t.dims, ErrorKind::Corruption, "critic tensor " + n + " has the wrong shape");
        t = std::move(tensor);
        ++matched;
      }
  });
  require(matched == f.tensors.size() && matched == 8, ErrorKind::Corruption, "critic tensor set mismatch");
  return c;
}

void RefineConfig::validate(std::size_t grid_len) const {
  require(k <= grid_len, ErrorKind::Config, "refine: k must be in [0, L]");
  require(candidates >= 1, ErrorKind::Config, "refine: candidates must be >= 1");
  sampler.validate();
}

RefineStep refine_once(const ModelParams& params, const Critic& critic, const TokenizerConfig& tok,
                       const TokenGrid& current, const TextTokens& text, const RefineConfig& cfg, Rng& rng) {
  cfg.validate(current.size());
  const auto report = grad_cam_scores(critic, decode_tokens(current, tok), text);
  RefineStep step{current, report.score, false, propose_revision(report, cfg.k), {}, 0};
  const std::uint64_t base = rng.next_u64();
  if (step.revision.empty()) return step;

  std::vector<std::uint8_t> bits(current.size(), 0);
  for (int p : step.revision) bits[std::size_t(p)] = 1;
  const auto mask = mask_from_patches(bits, tok);

  std::vector<EditResult> cands(cfg.candidates);
  std::vector<double> scores(cfg.candidates);
  auto run = [&](std::size_t r) {
    Rng cr(base, r);
    GenerationOrder order{step.revision};
    cr.shuffle(order.positions.begin(), order.positions.end());
    cands[r] = nep_edit_grid(params, current, text, mask, cfg.sampler, cr, cfg.mask_previous, order);
    scores[r] = critic_score(critic, decode_tokens(cands[r].grid, tok), text);
  };
  if (cfg.parallel && cfg.candidates > 1) {
    std::vector<std::thread> threads;
    for (std::size_t r = 0; r < cfg.candidates; ++r) threads.emplace_back(run, r);
    for (auto& th : threads) th.join();
  } else {
    for (std::size_t r = 0; r < cfg.candidates; ++r) run(r);
  }

  std::size_t best = 0;
  for (std::size_t r = 1; r < cfg.candidates; ++r)
    if (scores[r] > scores[best]) best = r;
  for (const auto& c : cands) step.decode_steps += c.steps;
  step.candidate_scores = scores;
  if (scores[best] > report.score) {
    step.grid = cands[best].grid;
    step.reward = scores[best];
    step.accepted = true;
  }
  return step;
}

std::vector<RefineStep> refine_loop(const ModelParams& params, const Critic& critic, const TokenizerConfig& tok,
                                    const TokenGrid& initial, const TextTokens& text, const RefineConfig& cfg,
                                    Rng& rng) {
  cfg.validate(initial.size());
  std::vector<RefineStep> traj;
  traj.push_back({initial, critic_score(critic, decode_tokens(initial, tok), text), true, {}, {}, 0});
  for (std::size_t r = 0; r < cfg.rounds; ++r) traj.push_back(refine_once(params, critic, tok, traj.back().grid, text, cfg, rng));
  return traj;
}

}  // namespace nep
