#include "nep/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "nep/checkpoint.hpp"
#include "nep/error.hpp"

namespace nep {

using nlohmann::json;

void TrainConfig::validate() const {
  optim.validate();
  require(steps >= 1 && batch_size >= 1, ErrorKind::Config, "train: steps and batch_size must be >= 1");
  auto unit = [](double p) { return p >= 0 && p <= 1; };
  require(unit(raster_prob) && unit(edit_mix_fraction) && unit(refine_mix_fraction) &&
              unit(mask_previous_prob) && unit(random_edit_order_prob) && unit(text_dropout),
          ErrorKind::Config, "train: probabilities must lie in [0, 1]");
}

json TrainConfig::to_json() const {
  return {{"steps", steps},
          {"batch_size", batch_size},
          {"lr", optim.lr},
          {"beta1", optim.beta1},
          {"beta2", optim.beta2},
          {"eps", optim.eps},
          {"weight_decay", optim.weight_decay},
          {"seed", seed},
          {"raster_prob", raster_prob},
          {"edit_mix_fraction", edit_mix_fraction},
          {"refine_mix_fraction", refine_mix_fraction},
          {"mask_previous_prob", mask_previous_prob},
          {"random_edit_order_prob", random_edit_order_prob},
          {"text_dropout", text_dropout},
          {"eval_every", eval_every},
          {"freeze_trunk", freeze_trunk}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.optim.lr = j.value("lr", c.optim.lr);
  c.optim.beta1 = j.value("beta1", c.optim.beta1);
  c.optim.beta2 = j.value("beta2", c.optim.beta2);
  c.optim.eps = j.value("eps", c.optim.eps);
  c.optim.weight_decay = j.value("weight_decay", c.optim.weight_decay);
  c.seed = j.value("seed", c.seed);
  c.raster_prob = j.value("raster_prob", c.raster_prob);
  c.edit_mix_fraction = j.value("edit_mix_fraction", c.edit_mix_fraction);
  c.refine_mix_fraction = j.value("refine_mix_fraction", c.refine_mix_fraction);
  c.mask_previous_prob = j.value("mask_previous_prob", c.mask_previous_prob);
  c.random_edit_order_prob = j.value("random_edit_order_prob", c.random_edit_order_prob);
  c.text_dropout = j.value("text_dropout", c.text_dropout);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.freeze_trunk = j.value("freeze_trunk", c.freeze_trunk);
  c.validate();
  return c;
}

json RunLog::entry_json(const LogEntry& e) {
  json j = {{"step", e.step}, {"loss", e.loss}, {"lr", e.lr}, {"elapsed_ms", e.elapsed_ms}};
  if (e.eval_loss) j["eval_loss"] = *e.eval_loss;
  return j;
}

void RunLog::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path);
  require(bool(out), ErrorKind::Input, "cannot write run log " + path.string());
  for (const auto& e : entries) out << entry_json(e).dump() << '\n';
}

Trainer::Trainer(ModelParams& params, const TrainConfig& cfg)
    : params_(params),
      cfg_(cfg),
      grads_(params.zeros_like()),
      m_(params.zeros_like()),
      v_(params.zeros_like()),
      rng_(cfg.seed, 0x7261696e) {
  cfg_.validate();
}

namespace {

std::vector<Tensor*> tensors_of(ModelParams& p, std::vector<std::string>* names = nullptr) {
  std::vector<Tensor*> out;
  p.visit([&](const std::string& n, Tensor& t) {
    out.push_back(&t);
    if (names) names->push_back(n);
  });
  return out;
}

TextTokens maybe_drop_text(const TextTokens& t, double p, Rng& rng) {
  if (p > 0 && rng.bernoulli(p)) return TextTokens{std::vector<int>(t.ids.size(), kPadId)};
  return t;
}

}  // namespace

double Trainer::apply(double loss_sum, std::size_t n) {
  const double loss = loss_sum / double(n);
  ++t_;
  require(std::isfinite(loss), ErrorKind::NonFinite,
          "non-finite training loss at step " + std::to_string(t_));
  std::vector<std::string> names;
  auto p = tensors_of(params_, &names);
  auto g = tensors_of(grads_), m = tensors_of(m_), v = tensors_of(v_);
  const float scale = 1.0f / float(n);
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (auto& x : g[i]->data) x *= scale;
    const bool trainable = !cfg_.freeze_trunk || names[i] == "edit.e_emb" || names[i] == "edit.u_emb";
    if (trainable) {
      for (float x : g[i]->data)
        require(std::isfinite(x), ErrorKind::NonFinite,
                "non-finite gradient in " + names[i] + " at step " + std::to_string(t_));
      nn::adamw_step(p[i]->data, g[i]->data, m[i]->data, v[i]->data, cfg_.optim, t_);
    }
    g[i]->zero();
  }
  return loss;
}

double Trainer::pretrain_step(const std::vector<const T2ISample*>& batch) {
  require(!batch.empty(), ErrorKind::Config, "pretrain_step: empty batch");
  double sum = 0;
  for (const auto* s : batch) {
    const auto order = sample_order(s->grid.size(), rng_, cfg_.raster_prob);
    const auto text = maybe_drop_text(s->text, cfg_.text_dropout, rng_);
    sum += forward_train(params_, build_pretrain_layout(text, s->grid, order), &grads_).loss;
  }
  return apply(sum, batch.size());
}

SequenceLayout finetune_layout(const EditSample& s, bool keep_mask, bool mask_previous, bool random_order,
                               Rng& rng) {
  if (!keep_mask || !s.mask || s.mask->edit_count() == 0)
    return build_edit_layout(s.text, s.source, std::nullopt, s.target);
  EditLayoutOptions opts;
  opts.mask_previous = mask_previous;
  if (random_order) {
    auto order = editing_order(*s.mask);
    rng.shuffle(order.positions.begin(), order.positions.end());
    opts.order = order;
  }
  return build_edit_layout(s.text, s.source, s.mask, s.target, opts);
}

double Trainer::finetune_edit_step(const std::vector<const EditSample*>& batch) {
  require(!batch.empty(), ErrorKind::Config, "finetune_edit_step: empty batch");
  require(params_.cfg.edit_extension, ErrorKind::Config, "finetune_edit_step: model lacks the edit extension");
  double sum = 0;
  for (const auto* s : batch) {
    require(s->source.size() == params_.cfg.grid_len && s->target.size() == params_.cfg.grid_len,
            ErrorKind::Input, "finetune: source/target size != L");
    require(!s->mask || s->mask->patch.size() == params_.cfg.grid_len, ErrorKind::Input,
            "finetune: mask size != L");
    const bool hide = rng_.bernoulli(cfg_.mask_previous_prob);
    const bool shuffle = rng_.bernoulli(cfg_.random_edit_order_prob);
    EditSample local = *s;
    local.text = maybe_drop_text(s->text, cfg_.text_dropout, rng_);
    sum += forward_train(params_, finetune_layout(local, true, hide, shuffle, rng_), &grads_).loss;
  }
  return apply(sum, batch.size());
}

EditSample make_refine_sample(const T2ISample& s, std::size_t k, std::size_t vocab, Rng& rng) {
  const std::size_t L = s.grid.size();
  std::vector<int> pos(L);
  for (std::size_t i = 0; i < L; ++i) pos[i] = int(i);
  rng.shuffle(pos.begin(), pos.end());
  EditSample out{s.text, s.grid, s.grid, EditMask{}};
  out.mask->patch.assign(L, 0);
  for (std::size_t i = 0; i < std::min(k, L); ++i) {
    const auto p = std::size_t(pos[i]);
    out.mask->patch[p] = 1;
    out.source.ids[p] = int(rng.below(vocab));
  }
  return out;
}

namespace {

// Epoch-shuffled index stream.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, Rng& rng) : n_(n), rng_(rng) {}
  std::size_t next() {
    if (pos_ == order_.size()) {
      order_.resize(n_);
      for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
      rng_.shuffle(order_.begin(), order_.end());
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::size_t n_;
  Rng& rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

RunLog start_log(const ModelParams& params, const TrainConfig& cfg) {
  RunLog log;
  log.param_count = count_params(params).total;
  log.config_hash = config_hash({{"model", params.cfg.to_json()}, {"training", cfg.to_json()}});
  return log;
}

}  // namespace

RunLog train_t2i(ModelParams& params, const std::vector<T2ISample>& data, const TrainConfig& cfg,
                 const std::vector<T2ISample>* eval, const StepCallback& on_step) {
  require(!data.empty(), ErrorKind::Config, "train_t2i: empty dataset");
  Trainer tr(params, cfg);
  Rng data_rng(cfg.seed, 0x64617461);
  BatchSampler sampler(data.size(), data_rng);
  RunLog log = start_log(params, cfg);
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<const T2ISample*> batch;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) batch.push_back(&data[sampler.next()]);
    LogEntry e{step, tr.pretrain_step(batch), cfg.optim.lr, ms_since(t0), std::nullopt};
    if (eval && cfg.eval_every && step % cfg.eval_every == 0) e.eval_loss = eval_t2i_loss(params, *eval, cfg.seed);
    log.entries.push_back(e);
    if (on_step && !on_step(e)) break;
  }
  return log;
}

RunLog train_edit(ModelParams& params, const std::vector<EditSample>& data,
                  const std::vector<T2ISample>& captioned, const TrainConfig& cfg,
                  const std::vector<EditSample>* eval, const StepCallback& on_step) {
  require(!data.empty(), ErrorKind::Config, "train_edit: empty dataset");
  Trainer tr(params, cfg);
  Rng data_rng(cfg.seed, 0x65646974);
  BatchSampler edit_sampler(data.size(), data_rng);
  std::optional<BatchSampler> cap_sampler;
  if (!captioned.empty()) cap_sampler.emplace(captioned.size(), data_rng);
  RunLog log = start_log(params, cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t L = params.cfg.grid_len;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<EditSample> owned;
    owned.reserve(cfg.batch_size);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      if (cap_sampler && data_rng.bernoulli(cfg.refine_mix_fraction)) {
        const std::size_t k = 1 + data_rng.below(L / 2);
        owned.push_back(make_refine_sample(captioned[cap_sampler->next()], k, params.cfg.vocab_image, data_rng));
        continue;
      }
      EditSample s = data[edit_sampler.next()];
      if (!data_rng.bernoulli(cfg.edit_mix_fraction)) s.mask.reset();
      owned.push_back(std::move(s));
    }
    std::vector<const EditSample*> batch;
    for (const auto& s : owned) batch.push_back(&s);
    LogEntry e{step, tr.finetune_edit_step(batch), cfg.optim.lr, ms_since(t0), std::nullopt};
    if (eval && cfg.eval_every && step % cfg.eval_every == 0) e.eval_loss = eval_edit_loss(params, *eval);
    log.entries.push_back(e);
    if (on_step && !on_step(e)) break;
  }
  return log;
}

double eval_t2i_loss(const ModelParams& params, const std::vector<T2ISample>& data,
                     std::optional<std::uint64_t> random_order_seed) {
  require(!data.empty(), ErrorKind::Config, "eval: empty dataset");
  std::optional<Rng> rng;
  if (random_order_seed) rng.emplace(*random_order_seed, 0x6576616c);
  double sum = 0;
  for (const auto& s : data) {
    const auto order = rng ? sample_order(s.grid.size(), *rng, 0.0) : GenerationOrder::identity(s.grid.size());
    sum += forward_train(params, build_pretrain_layout(s.text, s.grid, order)).loss;
  }
  return sum / double(data.size());
}

double eval_edit_loss(const ModelParams& params, const std::vector<EditSample>& data) {
  require(!data.empty(), ErrorKind::Config, "eval: empty dataset");
  double sum = 0;
  for (const auto& s : data) sum += forward_train(params, build_edit_layout(s.text, s.source, s.mask, s.target)).loss;
  return sum / double(data.size());
}

}  // namespace nep
