#pragma once
#include <cmath>
#include <span>

#include "nep/error.hpp"

namespace nep::nn {

// AdamW with decoupled weight decay. Defaults follow the published recipe
// (beta1 0.9, beta2 0.95, constant lr 1e-4).
struct OptimizerConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.95f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;

  void validate() const {
    require(lr > 0 && eps > 0, ErrorKind::Config, "optimizer: lr and eps must be positive");
    require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, ErrorKind::Config,
            "optimizer: betas must be in [0, 1)");
  }
};

// One update of a flat parameter slice. t is the 1-based step index.
inline void adamw_step(std::span<float> params, std::span<const float> grads, std::span<float> m,
                       std::span<float> v, const OptimizerConfig& cfg, long t) {
  require(params.size() == grads.size() && m.size() == params.size() && v.size() == params.size(),
          ErrorKind::Config, "adamw: shape mismatch");
  require(t >= 1, ErrorKind::Config, "adamw: step index must be >= 1");
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, double(t));
  const double c2 = 1.0 - std::pow(b2, double(t));
  const double decay = 1.0 - double(cfg.lr) * double(cfg.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double mi = b1 * m[i] + (1.0 - b1) * g;
    const double vi = b2 * v[i] + (1.0 - b2) * g * g;
    m[i] = float(mi);
    v[i] = float(vi);
    const double update = (mi / c1) / (std::sqrt(vi / c2) + double(cfg.eps));
    params[i] = float(double(params[i]) * decay - double(cfg.lr) * update);
  }
}

}  // namespace nep::nn
