#pragma once
// Evaluation metrics over analytic proxy features. Formulas follow the usual
// pixel-distance, feature-cosine, direction-similarity and Frechet-distance
// definitions; only the feature extractors are synthetic.

#include <string>
#include <vector>

#include "nep/image.hpp"
#include "nep/tokenizer.hpp"

namespace nep {

struct PixelMetrics {
  double l1 = 0, l2 = 0;
};

// Mean absolute / squared difference over RGB channels scaled to [0, 1].
PixelMetrics pixel_metrics(const Image& a, const Image& b);

// 4 quadrant palette histograms (fractions of patches) followed by the
// fraction of grid cells covered by each shape class.
std::vector<double> proxy_features(const Image& img, const TokenizerConfig& cfg);
std::size_t proxy_feature_dim(const TokenizerConfig& cfg);

// Bag of words over the standard text vocabulary.
std::vector<double> text_features(const std::string& text);

// Cosine similarity; Undefined error if either vector is zero.
double cosine(const std::vector<double>& a, const std::vector<double>& b);
double feature_similarity(const Image& a, const Image& b, const TokenizerConfig& cfg);

// Shared keyword-indicator space: object colors, shapes, backgrounds.
inline constexpr std::size_t kKeywordDim = 14;
std::vector<double> image_keywords(const Image& img, const TokenizerConfig& cfg);
std::vector<double> text_keywords(const std::string& text);

struct DirectionalMetrics {
  double dir_sim = 0;
  bool dir_defined = true;  // false when either delta vector is zero
  double out_sim = 0;  // 0 when the output shows no keyword at all
};

DirectionalMetrics directional_metrics(const Image& src, const Image& out, const std::string& src_caption,
                                       const std::string& tgt_caption, const TokenizerConfig& cfg);

struct FrechetStats {
  std::vector<double> mean;
  std::vector<double> cov;  // dim x dim, row-major, sample covariance (n - 1)
  std::size_t dim = 0;
};

// Needs at least two samples of equal dimension (Input error otherwise).
FrechetStats frechet_stats(const std::vector<std::vector<double>>& features);
// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)); eigenvalues below
// 1e-10 are clamped to zero in the square roots.
double frechet_distance(const FrechetStats& a, const FrechetStats& b);
double frechet_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b);

}  // namespace nep
