#pragma once
// Two-stage training: random-order text-to-image pretraining, then editing
// fine-tune with the mask embeddings. Constant learning rate AdamW.

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "json.hpp"
#include "nep/model.hpp"
#include "nep/nn/optim.hpp"

namespace nep {

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  nn::OptimizerConfig optim;
  std::uint64_t seed = 0;
  double raster_prob = 0.1;
  // Share of editing samples that keep their mask; the rest train the
  // full-regeneration fallback.
  double edit_mix_fraction = 0.5;
  // Share of fine-tune samples built from captioned images with a random
  // revision mask (teaches the refinement condition).
  double refine_mix_fraction = 0.25;
  // Among masked samples: probability of hiding the source tokens at edit
  // positions, and of decoding them in a random instead of ascending order.
  double mask_previous_prob = 0.5;
  double random_edit_order_prob = 0.5;
  double text_dropout = 0.0;  // replace the text with PAD (for guidance)
  std::size_t eval_every = 0;
  bool freeze_trunk = false;  // stage 2 only: update e_emb/u_emb alone

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct T2ISample {
  TextTokens text;
  TokenGrid grid;
};

struct EditSample {
  TextTokens text;
  TokenGrid source, target;
  std::optional<EditMask> mask;
};

struct LogEntry {
  std::size_t step = 0;
  double loss = 0;
  double lr = 0;
  double elapsed_ms = 0;
  std::optional<double> eval_loss;
};

struct RunLog {
  std::vector<LogEntry> entries;
  std::size_t param_count = 0;
  std::string config_hash;

  void write_jsonl(const std::filesystem::path& path) const;
  static nlohmann::json entry_json(const LogEntry& e);
};

// Owns optimizer state for one parameter set. Steps are serial and
// deterministic given the seed.
class Trainer {
 public:
  Trainer(ModelParams& params, const TrainConfig& cfg);

  // Fresh sample_order per sample, loss averaged over the batch, one AdamW step.
  double pretrain_step(const std::vector<const T2ISample*>& batch);
  // Masked samples train only their edit positions; unmasked ones the full
  // raster grid with an all-UNEDIT mask prefix.
  double finetune_edit_step(const std::vector<const EditSample*>& batch);

  long step_count() const { return t_; }
  Rng& rng() { return rng_; }

 private:
  double apply(double loss_sum, std::size_t n);

  ModelParams& params_;
  TrainConfig cfg_;
  ModelParams grads_, m_, v_;
  Rng rng_;
  long t_ = 0;
};

// Layout used for one fine-tune sample; exposed for tests.
SequenceLayout finetune_layout(const EditSample& s, bool keep_mask, bool mask_previous, bool random_order,
                               Rng& rng);

// A captioned grid turned into a refinement-style editing sample: k random
// revision positions whose source tokens are scrambled.
EditSample make_refine_sample(const T2ISample& s, std::size_t k, std::size_t vocab, Rng& rng);

// Called after every logged step; returning false stops the run.
using StepCallback = std::function<bool(const LogEntry&)>;

RunLog train_t2i(ModelParams& params, const std::vector<T2ISample>& data, const TrainConfig& cfg,
                 const std::vector<T2ISample>* eval = nullptr, const StepCallback& on_step = {});
RunLog train_edit(ModelParams& params, const std::vector<EditSample>& data,
                  const std::vector<T2ISample>& captioned, const TrainConfig& cfg,
                  const std::vector<EditSample>* eval = nullptr, const StepCallback& on_step = {});

// Mean teacher-forced loss, with an explicit order (identity if absent).
double eval_t2i_loss(const ModelParams& params, const std::vector<T2ISample>& data,
                     std::optional<std::uint64_t> random_order_seed = std::nullopt);
double eval_edit_loss(const ModelParams& params, const std::vector<EditSample>& data);

}  // namespace nep
