#pragma once
// Test-time refinement: a small text-conditioned convolutional critic,
// Grad-CAM token saliency, K-lowest revision proposal, and the
// propose / regenerate / accept-or-reject loop.

#include <optional>
#include <vector>

#include "json.hpp"
#include "nep/checkpoint.hpp"
#include "nep/edit.hpp"

namespace nep {

struct CriticConfig {
  std::size_t image_h = 32, image_w = 32, patch = 4;
  std::size_t hidden = 16;    // channels of the first 3x3 convolution
  std::size_t channels = 32;  // C of the grid-aligned feature map A
  std::size_t vocab_text = 64;
  // Drop the sigmoid: y = z. Used by the linear-critic Grad-CAM oracle.
  bool identity_output = false;

  std::size_t rows() const { return image_h / patch; }
  std::size_t cols() const { return image_w / patch; }
  void validate() const;
  nlohmann::json to_json() const;
  static CriticConfig from_json(const nlohmann::json& j);
};

// Input: RGB / 255 plus two coordinate channels.
//   h = relu(conv3x3(x)),  A = relu(conv_{p x p, stride p}(h))   [rows*cols x C]
//   g = mean over cells of A,  u = bag of text ids (PAD excluded, normalized)
//   w = u . W_text + w0,  z = b0 + b_text . u + w . g,  y = sigmoid(z)
struct Critic {
  CriticConfig cfg;
  Tensor conv1_w, conv1_b, conv2_w, conv2_b;
  Tensor head_b0, head_bt, head_wt, head_w0;

  static Critic init(const CriticConfig& cfg, Rng& rng);
  Critic zeros_like() const;
  void visit(const std::function<void(const std::string&, Tensor&)>& f);
  void visit(const std::function<void(const std::string&, const Tensor&)>& f) const;
};

struct CriticTape {
  Tensor x, h1_pre, h1, a_pre, a, pooled;
  std::vector<float> cols1, cols2;
  std::vector<double> bow, w;
  double z = 0, y = 0;
};

CriticTape critic_forward(const Critic& c, const Image& img, const TextTokens& text);
double critic_score(const Critic& c, const Image& img, const TextTokens& text);
// Accumulates d(loss)/d(params) given d(loss)/dy.
void critic_backward(const Critic& c, const CriticTape& t, double dy, Critic& grads);

struct GradCamReport {
  std::vector<double> alpha;     // per channel: spatial mean of dy/dA_c
  std::vector<double> saliency;  // per cell, raster order: ReLU(sum_c alpha_c A_c)
  double score = 0;
};

GradCamReport grad_cam_scores(const Critic& c, const Image& img, const TextTokens& text);

// The K cells with the smallest saliency, ties to the lower index, returned
// in ascending position order.
std::vector<int> propose_revision(const GradCamReport& report, std::size_t k);

struct CriticSample {
  Image image;
  TextTokens text;
  double score = 0;
};

struct CriticTrainConfig {
  std::size_t steps = 1500;
  std::size_t batch_size = 16;
  float lr = 3e-3f;
  std::uint64_t seed = 0;
};

// Labeled with the analytic scene-match score of the caption against a
// corrupted rendering (token noise, recolors, moves, swapped captions).
std::vector<CriticSample> make_critic_samples(std::size_t count, std::uint64_t seed, const TokenizerConfig& tok,
                                              std::size_t text_len);
// Mean-squared error on y; returns the per-step losses.
std::vector<double> train_critic(Critic& c, const std::vector<CriticSample>& data, const CriticTrainConfig& cfg);
double critic_mse(const Critic& c, const std::vector<CriticSample>& data);

void save_critic(const Critic& c, const std::filesystem::path& path);
Critic load_critic(const std::filesystem::path& path);

struct RefineConfig {
  std::size_t k = 16;
  std::size_t candidates = 4;
  std::size_t rounds = 4;
  bool mask_previous = true;
  bool parallel = false;  // candidates on separate threads; same result as serial
  SamplerConfig sampler;

  void validate(std::size_t grid_len) const;
};

struct RefineStep {
  TokenGrid grid;
  double reward = 0;  // critic score of `grid`
  bool accepted = false;
  std::vector<int> revision;
  std::vector<double> candidate_scores;
  std::size_t decode_steps = 0;
};

// One propose / regenerate / select / accept round. Candidate r decodes the
// revision positions in a random order drawn from fork(r) of a base seed taken
// from rng. Accepts iff the best candidate scores strictly higher.
RefineStep refine_once(const ModelParams& params, const Critic& critic, const TokenizerConfig& tok,
                       const TokenGrid& current, const TextTokens& text, const RefineConfig& cfg, Rng& rng);

// Entry 0 is the initial grid; one entry per round after it.
std::vector<RefineStep> refine_loop(const ModelParams& params, const Critic& critic, const TokenizerConfig& tok,
                                    const TokenGrid& initial, const TextTokens& text, const RefineConfig& cfg,
                                    Rng& rng);

}  // namespace nep
