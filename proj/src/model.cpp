#include "nep/model.hpp"

#include <algorithm>
#include <cmath>

#include "nep/error.hpp"

namespace nep {

using nlohmann::json;

void ModelConfig::validate() const {
  require(d_model > 0 && n_layers > 0 && n_heads > 0 && ffn_dim > 0, ErrorKind::Config,
          "model config: zero extent");
  require(d_model % n_heads == 0, ErrorKind::Config, "model config: d_model not divisible by n_heads");
  require(vocab_image > 0 && vocab_text > 0 && grid_len > 0 && text_len > 0, ErrorKind::Config,
          "model config: empty vocabulary or sequence");
  require(!edit_extension || random_order, ErrorKind::Config,
          "model config: edit extension requires the random-order extension");
}

json ModelConfig::to_json() const {
  return json{{"d_model", d_model},         {"n_layers", n_layers},
              {"n_heads", n_heads},         {"ffn_dim", ffn_dim},
              {"vocab_image", vocab_image}, {"vocab_text", vocab_text},
              {"grid_len", grid_len},       {"text_len", text_len},
              {"random_order", random_order}, {"edit_extension", edit_extension}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model");
  c.n_layers = j.at("n_layers");
  c.n_heads = j.at("n_heads");
  c.ffn_dim = j.at("ffn_dim");
  c.vocab_image = j.at("vocab_image");
  c.vocab_text = j.at("vocab_text");
  c.grid_len = j.at("grid_len");
  c.text_len = j.at("text_len");
  c.random_order = j.value("random_order", true);
  c.edit_extension = j.value("edit_extension", false);
  c.validate();
  return c;
}

ModelParams ModelParams::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  constexpr double kStd = 0.02;
  const std::size_t d = cfg.d_model;
  ModelParams p;
  p.cfg = cfg;
  p.cfg.edit_extension = false;
  auto normal = [&](std::vector<std::size_t> dims) {
    Tensor t(std::move(dims));
    t.fill_normal(rng, kStd);
    return t;
  };
  p.text_embed = normal({cfg.vocab_text, d});
  p.image_embed = normal({cfg.vocab_image, d});
  p.text_pos = normal({cfg.text_len, d});
  if (cfg.random_order) {
    p.order_pe = normal({cfg.grid_len, d});
    p.start = normal({d});
  }
  p.segment = normal({3, d});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    auto b = nn::BlockWeights<float>::shaped(d, cfg.ffn_dim);
    for (Tensor* t : {&b.wq, &b.wk, &b.wv, &b.wo, &b.w1, &b.w2}) t->fill_normal(rng, kStd);
    p.blocks.push_back(std::move(b));
  }
  p.final_norm = Tensor({d}, 1.0f);
  p.head = normal({d, cfg.vocab_image});
  if (cfg.edit_extension) p.add_edit_extension(rng);
  return p;
}

void ModelParams::add_edit_extension(Rng& rng) {
  require(cfg.random_order, ErrorKind::Config, "edit extension requires the random-order extension");
  if (cfg.edit_extension) return;
  cfg.edit_extension = true;
  e_emb = Tensor({cfg.d_model});
  u_emb = Tensor({cfg.d_model});
  e_emb.fill_normal(rng, 0.02);
  u_emb.fill_normal(rng, 0.02);
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  z.visit([](const std::string&, Tensor& t) { t.zero(); });
  return z;
}

void ModelParams::visit(const std::function<void(const std::string&, Tensor&)>& f) {
  f("embed.image", image_embed);
  f("embed.text", text_embed);
  f("embed.text_pos", text_pos);
  if (cfg.random_order) {
    f("order.pe", order_pe);
    f("order.start", start);
  }
  f("segment.tags", segment);
  if (cfg.edit_extension) {
    f("edit.e_emb", e_emb);
    f("edit.u_emb", u_emb);
  }
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const std::string prefix = "block." + std::to_string(l) + ".";
    blocks[l].visit([&](std::string_view n, Tensor& t) { f(prefix + std::string(n), t); });
  }
  f("out.head", head);
  f("out.norm", final_norm);
}

void ModelParams::visit(const std::function<void(const std::string&, const Tensor&)>& f) const {
  const_cast<ModelParams*>(this)->visit(
      [&](const std::string& n, Tensor& t) { f(n, static_cast<const Tensor&>(t)); });
}

ParamCount count_params(const ModelParams& params) {
  ParamCount c;
  params.visit([&](const std::string& n, const Tensor& t) {
    c.tensors.emplace_back(n, t.size());
    c.total += t.size();
    if (n.rfind("edit.", 0) == 0) c.edit_extension += t.size();
    if (n.rfind("order.", 0) == 0) c.random_order += t.size();
  });
  return c;
}

ParamCount count_params(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model;
  ParamCount c;
  auto add = [&](const std::string& n, std::size_t count) {
    c.tensors.emplace_back(n, count);
    c.total += count;
  };
  add("embed.image", cfg.vocab_image * d);
  add("embed.text", cfg.vocab_text * d);
  add("embed.text_pos", cfg.text_len * d);
  if (cfg.random_order) {
    add("order.pe", cfg.grid_len * d);
    add("order.start", d);
    c.random_order = cfg.grid_len * d + d;
  }
  add("segment.tags", 3 * d);
  if (cfg.edit_extension) {
    add("edit.e_emb", d);
    add("edit.u_emb", d);
    c.edit_extension = 2 * d;
  }
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string prefix = "block." + std::to_string(l) + ".";
    add(prefix + "attn_norm", d);
    add(prefix + "ffn_norm", d);
    add(prefix + "w1", d * cfg.ffn_dim);
    add(prefix + "w2", cfg.ffn_dim * d);
    add(prefix + "wk", d * d);
    add(prefix + "wo", d * d);
    add(prefix + "wq", d * d);
    add(prefix + "wv", d * d);
  }
  add("out.head", d * cfg.vocab_image);
  add("out.norm", d);
  return c;
}

namespace {

enum class Table { TextEmbed, ImageEmbed, TextPos, OrderPe, Start, Segment, EEmb, UEmb };

struct Src {
  Table table;
  std::size_t row;
};

Tensor& table_of(ModelParams& p, Table t) {
  switch (t) {
    case Table::TextEmbed: return p.text_embed;
    case Table::ImageEmbed: return p.image_embed;
    case Table::TextPos: return p.text_pos;
    case Table::OrderPe: return p.order_pe;
    case Table::Start: return p.start;
    case Table::Segment: return p.segment;
    case Table::EEmb: return p.e_emb;
    case Table::UEmb: return p.u_emb;
  }
  fail(ErrorKind::Config, "bad embedding table");
}

const Tensor& table_of(const ModelParams& p, Table t) {
  return table_of(const_cast<ModelParams&>(p), t);
}

// Row index of the first output row that predicts a generation step.
std::size_t first_logit_row(const ModelParams& p, const SequenceLayout& lay) {
  return p.cfg.random_order ? lay.prefix_len() : lay.prefix_len() - 1;
}

std::size_t total_rows(const ModelParams& p, const SequenceLayout& lay) {
  return first_logit_row(p, lay) + lay.steps();
}

void validate_layout(const ModelParams& p, const SequenceLayout& lay) {
  const auto& cfg = p.cfg;
  require(lay.text_len == cfg.text_len, ErrorKind::Config, "layout text length != model text_len");
  require(lay.grid_len == cfg.grid_len, ErrorKind::Config, "layout grid length != model grid_len");
  require(lay.pe_index_per_step.size() == lay.steps(), ErrorKind::Config,
          "layout: pe index count != step count");
  for (std::size_t i = 0; i < lay.prefix_len(); ++i) {
    const int id = lay.prefix_ids[i];
    switch (lay.segment_tags[i]) {
      case Segment::Text:
        require(id >= 0 && std::size_t(id) < cfg.vocab_text, ErrorKind::Config, "text id out of range");
        break;
      case Segment::Source:
        require(cfg.random_order, ErrorKind::Config, "editing layouts need a random-order model");
        require((id == kPlaceholderId && cfg.edit_extension) || (id >= 0 && std::size_t(id) < cfg.vocab_image),
                ErrorKind::Config, "source id out of range");
        break;
      case Segment::Mask:
        require(cfg.edit_extension, ErrorKind::Config,
                "mask conditioning needs a model with the edit extension");
        break;
    }
  }
  for (int pe : lay.pe_index_per_step)
    require(pe >= 0 && std::size_t(pe) < cfg.grid_len, ErrorKind::Config, "pe index out of range");
  if (!cfg.random_order) {
    require(!lay.is_edit() && lay.gen_order.positions == GenerationOrder::identity(cfg.grid_len).positions,
            ErrorKind::Config, "raster-only model supports only identity-order pretraining layouts");
  }
}

// Embedding sources of input row r. tokens[i] is the token of generation step i.
void row_sources(const ModelParams& p, const SequenceLayout& lay, std::size_t r,
                 const std::vector<int>& tokens, std::vector<Src>& out) {
  out.clear();
  const std::size_t P = lay.prefix_len();
  auto image_id = [&](int id) {
    require(id >= 0 && std::size_t(id) < p.cfg.vocab_image, ErrorKind::Input, "image token out of range");
    return std::size_t(id);
  };
  if (r < P) {
    const int id = lay.prefix_ids[r];
    const auto pos = std::size_t(lay.prefix_pos[r]);
    switch (lay.segment_tags[r]) {
      case Segment::Text:
        out = {{Table::TextEmbed, std::size_t(id)}, {Table::TextPos, pos}, {Table::Segment, 0}};
        break;
      case Segment::Source:
        out = {{id == kPlaceholderId ? Table::EEmb : Table::ImageEmbed,
                id == kPlaceholderId ? 0 : image_id(id)},
               {Table::OrderPe, pos},
               {Table::Segment, 1}};
        break;
      case Segment::Mask:
        out = {{id == int(MaskSelector::Edit) ? Table::EEmb : Table::UEmb, 0},
               {Table::OrderPe, pos},
               {Table::Segment, 2}};
        break;
    }
    return;
  }
  if (p.cfg.random_order) {
    const std::size_t step = r - P;
    if (step == 0)
      out.push_back({Table::Start, 0});
    else
      out.push_back({Table::ImageEmbed, image_id(tokens.at(step - 1))});
    out.push_back({Table::OrderPe, std::size_t(lay.pe_index_per_step[step])});
  } else {
    const std::size_t step = r - P + 1;  // row P holds the token of step 0
    out.push_back({Table::ImageEmbed, image_id(tokens.at(step - 1))});
  }
}

void embed_rows(const ModelParams& p, const SequenceLayout& lay, const std::vector<int>& tokens,
                std::size_t begin, std::size_t end, Tensor& x) {
  const std::size_t d = p.cfg.d_model;
  x = Tensor({end - begin, d});
  std::vector<Src> srcs;
  for (std::size_t r = begin; r < end; ++r) {
    row_sources(p, lay, r, tokens, srcs);
    float* dst = x.ptr() + (r - begin) * d;
    for (const auto& s : srcs) kernels::axpy<float>(1.0f, table_of(p, s.table).ptr() + s.row * d, dst, d);
  }
}

}  // namespace

Tensor embed_layout(const ModelParams& params, const SequenceLayout& layout,
                    const std::vector<int>& tokens) {
  validate_layout(params, layout);
  Tensor x;
  embed_rows(params, layout, tokens, 0, total_rows(params, layout), x);
  return x;
}

Tensor trunk_logits(const ModelParams& params, const Tensor& input_rows, std::size_t first_row) {
  Tensor x = input_rows, y;
  for (const auto& b : params.blocks) {
    nn::block_forward<float>(x, b, params.cfg.n_heads, true, nullptr, nullptr, y);
    std::swap(x, y);
  }
  const std::size_t d = params.cfg.d_model;
  Tensor tail({x.rows() - first_row, d});
  std::copy(x.data.begin() + std::ptrdiff_t(first_row * d), x.data.end(), tail.data.begin());
  Tensor h, logits;
  std::vector<double> r;
  nn::rms_norm_forward(tail, params.final_norm, h, r);
  nn::linear_forward(h, params.head, logits);
  return logits;
}

ForwardResult forward_train(const ModelParams& params, const SequenceLayout& layout,
                            ModelParams* grads, const std::vector<float>* step_weights) {
  validate_layout(params, layout);
  require(layout.teacher_ids.has_value(), ErrorKind::Config, "forward_train: layout has no teacher ids");
  const auto& tokens = *layout.teacher_ids;
  require(tokens.size() == layout.steps(), ErrorKind::Config, "forward_train: teacher length != steps");
  const std::size_t d = params.cfg.d_model, heads = params.cfg.n_heads;
  const std::size_t rows = total_rows(params, layout), first = first_logit_row(params, layout);

  Tensor x;
  embed_rows(params, layout, tokens, 0, rows, x);
  std::vector<nn::BlockTape<float>> tapes(params.blocks.size());
  Tensor y;
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    nn::block_forward<float>(x, params.blocks[l], heads, true, nullptr, &tapes[l], y);
    std::swap(x, y);
  }
  Tensor tail({rows - first, d});
  std::copy(x.data.begin() + std::ptrdiff_t(first * d), x.data.end(), tail.data.begin());
  Tensor h;
  std::vector<double> rinv;
  nn::rms_norm_forward(tail, params.final_norm, h, rinv);

  ForwardResult res;
  nn::linear_forward(h, params.head, res.logits);
  std::vector<float> ones(layout.steps(), 1.0f);
  const auto& w = step_weights ? *step_weights : ones;
  Tensor dlogits;
  auto ce = nn::cross_entropy(res.logits, tokens, w, grads ? &dlogits : nullptr);
  res.loss = ce.loss;
  res.step_nll = std::move(ce.per_row);
  if (!grads) return res;

  Tensor dh(h.dims), dtail(tail.dims);
  nn::linear_backward(h, params.head, dlogits, &dh, &grads->head);
  nn::rms_norm_backward(tail, params.final_norm, rinv, dh, &dtail, &grads->final_norm);
  Tensor dx({rows, d});
  std::copy(dtail.data.begin(), dtail.data.end(), dx.data.begin() + std::ptrdiff_t(first * d));
  Tensor dprev;
  for (std::size_t l = params.blocks.size(); l-- > 0;) {
    nn::block_backward(tapes[l], params.blocks[l], heads, true, dx, dprev, grads->blocks[l]);
    std::swap(dx, dprev);
  }
  std::vector<Src> srcs;
  for (std::size_t r = 0; r < rows; ++r) {
    row_sources(params, layout, r, tokens, srcs);
    for (const auto& s : srcs)
      kernels::axpy<float>(1.0f, dx.ptr() + r * d, table_of(*grads, s.table).ptr() + s.row * d, d);
  }
  return res;
}

void SamplerConfig::validate() const {
  require(greedy || temperature > 0, ErrorKind::Config, "sampler: temperature must be > 0");
  require(top_k >= 0, ErrorKind::Config, "sampler: top_k must be >= 1 (or 0 for all)");
}

nlohmann::json SamplerConfig::to_json() const {
  return {{"greedy", greedy},
          {"temperature", temperature},
          {"top_k", top_k},
          {"guidance", guidance ? nlohmann::json(*guidance) : nlohmann::json(nullptr)}};
}

SamplerConfig SamplerConfig::from_json(const nlohmann::json& j) {
  SamplerConfig s;
  s.greedy = j.value("greedy", s.greedy);
  s.temperature = j.value("temperature", s.temperature);
  s.top_k = j.value("top_k", s.top_k);
  if (j.contains("guidance") && !j.at("guidance").is_null()) s.guidance = j.at("guidance").get<float>();
  s.validate();
  return s;
}

int sample_token(std::span<const float> logits, const SamplerConfig& sampler, Rng& rng) {
  require(!logits.empty(), ErrorKind::Config, "sample_token: empty logits");
  require(sampler.top_k >= 0, ErrorKind::Config, "sample_token: top_k < 1");
  if (sampler.greedy) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
      if (logits[i] > logits[best]) best = i;
    return int(best);
  }
  require(sampler.temperature > 0, ErrorKind::Config, "sample_token: temperature must be > 0");
  std::vector<std::size_t> idx(logits.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::size_t k = sampler.top_k == 0 ? idx.size() : std::min<std::size_t>(std::size_t(sampler.top_k), idx.size());
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  const double t = sampler.temperature;
  double mx = -INFINITY;
  for (auto i : idx) mx = std::max(mx, double(logits[i]) / t);
  std::vector<double> w(k);
  double z = 0;
  for (std::size_t j = 0; j < k; ++j) {
    w[j] = std::exp(double(logits[idx[j]]) / t - mx);
    z += w[j];
  }
  const double u = rng.uniform() * z;
  double acc = 0;
  for (std::size_t j = 0; j < k; ++j) {
    acc += w[j];
    if (u < acc) return int(idx[j]);
  }
  return int(idx[k - 1]);
}

DecodeSession::DecodeSession(const ModelParams& params, const SequenceLayout& layout)
    : params_(params), layout_(layout) {
  validate_layout(params, layout);
  kv_.resize(params.blocks.size());
  for (auto& kv : kv_) kv.reset(total_rows(params, layout), params.cfg.d_model);
}

std::vector<float> DecodeSession::run_rows(const Tensor& rows) {
  Tensor x = rows, y;
  for (std::size_t l = 0; l < params_.blocks.size(); ++l) {
    nn::block_forward<float>(x, params_.blocks[l], params_.cfg.n_heads, true, &kv_[l], nullptr, y);
    std::swap(x, y);
  }
  const std::size_t d = params_.cfg.d_model;
  Tensor last({1, d});
  std::copy(x.data.end() - std::ptrdiff_t(d), x.data.end(), last.data.begin());
  Tensor h, logits;
  std::vector<double> r;
  nn::rms_norm_forward(last, params_.final_norm, h, r);
  nn::linear_forward(h, params_.head, logits);
  return logits.data;
}

std::vector<float> DecodeSession::prefill(std::size_t forced) {
  require(kv_.empty() || kv_[0].len == 0, ErrorKind::Config, "decode: prefill called twice");
  require(forced < layout_.steps() || layout_.steps() == 0, ErrorKind::Config,
          "decode: forced steps must leave at least one step");
  if (layout_.steps() == 0) return {};
  std::vector<int> tokens(layout_.steps(), 0);
  if (forced > 0) {
    require(layout_.teacher_ids.has_value(), ErrorKind::Config, "decode: forced steps need teacher ids");
    std::copy_n(layout_.teacher_ids->begin(), forced, tokens.begin());
  }
  Tensor rows;
  embed_rows(params_, layout_, tokens, 0, first_logit_row(params_, layout_) + forced + 1, rows);
  step_ = forced;
  committed_.assign(tokens.begin(), tokens.end());
  return run_rows(rows);
}

std::vector<float> DecodeSession::advance(int token) {
  require(step_ < layout_.steps(), ErrorKind::Config, "decode: advance past last step");
  committed_[step_] = token;
  ++step_;
  if (step_ == layout_.steps()) return {};
  const std::size_t r = first_logit_row(params_, layout_) + step_;
  Tensor row;
  embed_rows(params_, layout_, committed_, r, r + 1, row);
  return run_rows(row);
}

DecodeResult decode(const ModelParams& params, const SequenceLayout& layout,
                    const SamplerConfig& sampler, Rng& rng, std::size_t forced) {
  sampler.validate();
  DecodeResult out;
  if (layout.steps() == 0) return out;
  if (forced == layout.steps()) {
    out.tokens = *layout.teacher_ids;
    return out;
  }
  DecodeSession cond(params, layout);
  std::optional<SequenceLayout> uncond_layout;
  std::optional<DecodeSession> uncond;
  if (sampler.guidance) {
    uncond_layout = layout;
    for (std::size_t i = 0; i < uncond_layout->prefix_len(); ++i)
      if (uncond_layout->segment_tags[i] == Segment::Text) uncond_layout->prefix_ids[i] = kPadId;
    uncond.emplace(params, *uncond_layout);
  }
  auto mix = [&](std::vector<float> c, const std::vector<float>& u) {
    if (!sampler.guidance) return c;
    const float s = *sampler.guidance;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = u[i] + s * (c[i] - u[i]);
    return c;
  };
  std::vector<float> logits = cond.prefill(forced);
  if (uncond) logits = mix(logits, uncond->prefill(forced));
  if (forced > 0)
    out.tokens.assign(layout.teacher_ids->begin(), layout.teacher_ids->begin() + std::ptrdiff_t(forced));
  for (std::size_t step = forced; step < layout.steps(); ++step) {
    const int tok = sample_token(logits, sampler, rng);
    out.tokens.push_back(tok);
    out.logprobs.push_back(nn::log_softmax_row<float>(logits)[std::size_t(tok)]);
    ++out.sampled_steps;
    auto next = cond.advance(tok);
    if (uncond) {
      auto un = uncond->advance(tok);
      if (!next.empty()) next = mix(next, un);
    }
    logits = std::move(next);
  }
  return out;
}

}  // namespace nep
