#pragma once
// Decoder-only transformer with target-aware positional embeddings.
//
// Input rows, in order:
//   text slot k:    text_embed[id] + text_pos[k] + segment[TEXT]
//   source slot p:  image_embed[id] (or e_emb if withheld) + order_pe[p] + segment[SOURCE]
//   mask slot p:    (e_emb | u_emb) + order_pe[p] + segment[MASK]
//   gen step i:     (i == 0 ? start : image_embed[I_{o_{i-1}}]) + order_pe[o_i]
// and gen step i's output row predicts I_{o_i}. Attention is causal over the
// whole sequence. A model without the random-order extension has no order_pe
// or start row: it predicts the first image token from the last text row and
// only supports raster pretraining layouts.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nep/nn/attention.hpp"
#include "nep/sequence.hpp"

namespace nep {

struct ModelConfig {
  std::size_t d_model = 128;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t ffn_dim = 512;
  std::size_t vocab_image = 64;
  std::size_t vocab_text = 64;
  std::size_t grid_len = 64;
  std::size_t text_len = 16;
  bool random_order = true;     // order_pe table + start embedding
  bool edit_extension = false;  // e_emb / u_emb

  void validate() const;  // throws Config
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

struct ModelParams {
  ModelConfig cfg;
  Tensor text_embed;   // [V_txt x d]
  Tensor image_embed;  // [V_img x d]
  Tensor text_pos;     // [L_T x d]
  Tensor order_pe;     // [L x d]   (random_order)
  Tensor start;        // [d]       (random_order)
  Tensor segment;      // [3 x d]
  Tensor e_emb, u_emb; // [d] each  (edit_extension)
  std::vector<nn::BlockWeights<float>> blocks;
  Tensor final_norm;   // [d]
  Tensor head;         // [d x V_img]

  // Normal(0, 0.02) for embeddings and projections, ones for norm gains.
  static ModelParams init(const ModelConfig& cfg, Rng& rng);
  // Same shapes, all zero (gradient / optimizer-moment storage).
  ModelParams zeros_like() const;
  // Stage-2 initialization: adds e_emb/u_emb and leaves everything else as is.
  void add_edit_extension(Rng& rng);

  // Visits every present tensor with its checkpoint name, in name order.
  void visit(const std::function<void(const std::string&, Tensor&)>& f);
  void visit(const std::function<void(const std::string&, const Tensor&)>& f) const;
};

struct ParamCount {
  std::vector<std::pair<std::string, std::size_t>> tensors;
  std::size_t total = 0;
  std::size_t edit_extension = 0;  // e_emb + u_emb
  std::size_t random_order = 0;    // order_pe + start
};

ParamCount count_params(const ModelParams& params);
// Expected table for a config, derived from shapes alone.
ParamCount count_params(const ModelConfig& cfg);

struct ForwardResult {
  Tensor logits;                    // [steps x V_img]
  double loss = 0;                  // weighted mean NLL over generation steps
  std::vector<double> step_nll;     // per step
};

// Teacher-forced forward over all generation steps. If grads is given, the
// gradient of loss is accumulated into it. step_weights (default all ones)
// restricts which steps count toward the loss.
ForwardResult forward_train(const ModelParams& params, const SequenceLayout& layout,
                            ModelParams* grads = nullptr,
                            const std::vector<float>* step_weights = nullptr);

struct SamplerConfig {
  bool greedy = false;
  float temperature = 1.0f;
  int top_k = 0;                    // 0 = whole vocabulary
  std::optional<float> guidance;    // classifier-free guidance scale; off by default

  void validate() const;
  nlohmann::json to_json() const;
  static SamplerConfig from_json(const nlohmann::json& j);  // missing keys keep defaults
};

// greedy: argmax, lowest id on ties. Otherwise softmax(logits / T) over the
// top_k largest logits (ties by lower id), sampled with one uniform draw.
int sample_token(std::span<const float> logits, const SamplerConfig& sampler, Rng& rng);

// Incremental decoder owning one KV cache per layer.
class DecodeSession {
 public:
  DecodeSession(const ModelParams& params, const SequenceLayout& layout);

  // Feeds the prefix and the first `forced` teacher tokens (from
  // layout.teacher_ids) and returns logits predicting step `forced`.
  std::vector<float> prefill(std::size_t forced = 0);
  // Commits the token for the current step; returns logits for the next step
  // (empty once all steps are committed).
  std::vector<float> advance(int token);

  std::size_t step() const { return step_; }

 private:
  std::vector<float> run_rows(const Tensor& rows);

  const ModelParams& params_;
  const SequenceLayout& layout_;
  std::vector<nn::LayerKv<float>> kv_;
  std::vector<int> committed_;
  std::size_t step_ = 0;
};

struct DecodeResult {
  std::vector<int> tokens;        // one per generation step, in order sequence
  std::vector<double> logprobs;   // model log-prob of each sampled token
  std::size_t sampled_steps = 0;  // steps not teacher-forced
};

// Samples every step after the first `forced` (which are copied from
// layout.teacher_ids). With guidance set, a second session runs on an all-PAD
// text prefix and logits are mixed as u + s * (c - u).
DecodeResult decode(const ModelParams& params, const SequenceLayout& layout,
                    const SamplerConfig& sampler, Rng& rng, std::size_t forced = 0);

// Input embedding rows for a layout whose steps' previous tokens are taken
// from `tokens` (teacher stream). Exposed for equivalence tests.
Tensor embed_layout(const ModelParams& params, const SequenceLayout& layout,
                    const std::vector<int>& tokens);

// Runs the trunk and output head on precomputed input rows; returns logits
// for rows [first_row, rows).
Tensor trunk_logits(const ModelParams& params, const Tensor& input_rows, std::size_t first_row);

}  // namespace nep
