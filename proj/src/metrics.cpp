#include "nep/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "nep/error.hpp"
#include "nep/scene.hpp"
#include "nep/sequence.hpp"

namespace nep {

PixelMetrics pixel_metrics(const Image& a, const Image& b) {
  require(a.height == b.height && a.width == b.width && a.channels == b.channels && !a.pixels.empty(),
          ErrorKind::Input, "pixel_metrics: image dimensions differ");
  PixelMetrics m;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = (double(a.pixels[i]) - double(b.pixels[i])) / 255.0;
    m.l1 += std::fabs(d);
    m.l2 += d * d;
  }
  m.l1 /= double(a.pixels.size());
  m.l2 /= double(a.pixels.size());
  return m;
}

std::size_t proxy_feature_dim(const TokenizerConfig& cfg) { return 4 * cfg.vocab() + scene::kShapeCount; }

std::vector<double> proxy_features(const Image& img, const TokenizerConfig& cfg) {
  const auto grid = encode_image(img, cfg);
  const std::size_t V = cfg.vocab(), rows = grid.rows, cols = grid.cols;
  std::vector<double> f(proxy_feature_dim(cfg), 0.0);
  std::size_t quad_n[4] = {0, 0, 0, 0};
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) ++quad_n[(2 * r < rows ? 0 : 2) + (2 * c < cols ? 0 : 1)];
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t q = (2 * r < rows ? 0 : 2) + (2 * c < cols ? 0 : 1);
      f[q * V + std::size_t(grid.ids[r * cols + c])] += 1.0 / double(quad_n[q]);
    }
  const auto a = scene::analyze(grid, cfg);
  for (const auto& o : a.objects)
    if (o.shape) f[4 * V + std::size_t(*o.shape)] += double(o.cells.size()) / double(grid.size());
  return f;
}

std::vector<double> text_features(const std::string& text) {
  const auto& vocab = TextVocab::standard();
  std::vector<double> f(vocab.size(), 0.0);
  std::istringstream in(text);
  for (std::string w; in >> w;)
    if (auto id = vocab.find(w)) f[std::size_t(*id)] += 1.0;
  return f;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size(), ErrorKind::Input, "cosine: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  require(na > 0 && nb > 0, ErrorKind::Undefined, "cosine similarity of a zero vector is undefined");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double feature_similarity(const Image& a, const Image& b, const TokenizerConfig& cfg) {
  return cosine(proxy_features(a, cfg), proxy_features(b, cfg));
}

namespace {

constexpr std::size_t kShapeOffset = scene::kColorCount;
constexpr std::size_t kBackgroundOffset = kShapeOffset + scene::kShapeCount;
static_assert(kBackgroundOffset + scene::kBackgroundCount == kKeywordDim);

}  // namespace

std::vector<double> image_keywords(const Image& img, const TokenizerConfig& cfg) {
  std::vector<double> k(kKeywordDim, 0.0);
  const auto a = scene::analyze(encode_image(img, cfg), cfg);
  for (const auto& o : a.objects) {
    if (o.color) k[std::size_t(*o.color)] = 1.0;
    if (o.shape) k[kShapeOffset + std::size_t(*o.shape)] = 1.0;
  }
  if (a.background) k[kBackgroundOffset + std::size_t(*a.background)] = 1.0;
  return k;
}

std::vector<double> text_keywords(const std::string& text) {
  std::vector<double> k(kKeywordDim, 0.0);
  std::istringstream in(text);
  for (std::string w; in >> w;) {
    for (int c = 0; c < scene::kColorCount; ++c)
      if (w == scene::name(scene::Color(c))) k[std::size_t(c)] = 1.0;
    for (int s = 0; s < scene::kShapeCount; ++s)
      if (w == scene::name(scene::Shape(s))) k[kShapeOffset + std::size_t(s)] = 1.0;
    for (int b = 0; b < scene::kBackgroundCount; ++b)
      if (w == scene::name(scene::Background(b))) k[kBackgroundOffset + std::size_t(b)] = 1.0;
  }
  return k;
}

DirectionalMetrics directional_metrics(const Image& src, const Image& out, const std::string& src_caption,
                                       const std::string& tgt_caption, const TokenizerConfig& cfg) {
  const auto fs = image_keywords(src, cfg), fo = image_keywords(out, cfg);
  const auto gs = text_keywords(src_caption), gt = text_keywords(tgt_caption);
  DirectionalMetrics m;
  // An output with no recognizable keyword shares nothing with the caption.
  const bool blank = std::all_of(fo.begin(), fo.end(), [](double v) { return v == 0; });
  m.out_sim = blank ? 0.0 : cosine(fo, gt);
  std::vector<double> di(kKeywordDim), dt(kKeywordDim);
  double ni = 0, nt = 0;
  for (std::size_t i = 0; i < kKeywordDim; ++i) {
    di[i] = fo[i] - fs[i];
    dt[i] = gt[i] - gs[i];
    ni += di[i] * di[i];
    nt += dt[i] * dt[i];
  }
  if (ni == 0 || nt == 0) {
    m.dir_defined = false;
    return m;
  }
  m.dir_sim = cosine(di, dt);
  return m;
}

FrechetStats frechet_stats(const std::vector<std::vector<double>>& features) {
  require(features.size() >= 2, ErrorKind::Input, "frechet: need at least two samples per set");
  const std::size_t n = features.size(), d = features[0].size();
  require(d >= 1, ErrorKind::Input, "frechet: empty feature vectors");
  Eigen::MatrixXd x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    require(features[i].size() == d, ErrorKind::Input, "frechet: ragged feature set");
    for (std::size_t j = 0; j < d; ++j) x(Eigen::Index(i), Eigen::Index(j)) = features[i][j];
  }
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mu;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / double(n - 1);
  FrechetStats s;
  s.dim = d;
  s.mean.assign(mu.data(), mu.data() + d);
  s.cov.resize(d * d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) s.cov[i * d + j] = cov(Eigen::Index(i), Eigen::Index(j));
  return s;
}

namespace {

constexpr double kEigenClamp = 1e-10;

Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = ev(i) < kEigenClamp ? 0.0 : std::sqrt(ev(i));
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const FrechetStats& a, const FrechetStats& b) {
  require(a.dim == b.dim && a.dim >= 1, ErrorKind::Input, "frechet: dimension mismatch");
  const auto d = Eigen::Index(a.dim);
  const Eigen::Map<const Eigen::VectorXd> ma(a.mean.data(), d), mb(b.mean.data(), d);
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> sa(a.cov.data(), d, d),
      sb(b.cov.data(), d, d);
  // Tr((Sa Sb)^(1/2)) = Tr((Sa^(1/2) Sb Sa^(1/2))^(1/2)), the symmetric form.
  const Eigen::MatrixXd ra = sym_sqrt(sa);
  const Eigen::MatrixXd inner = ra * sb * ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  double tr_sqrt = 0;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double ev = es.eigenvalues()(i);
    if (ev >= kEigenClamp) tr_sqrt += std::sqrt(ev);
  }
  const double dist = (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  return std::max(dist, 0.0);
}

double frechet_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  return frechet_distance(frechet_stats(a), frechet_stats(b));
}

}  // namespace nep
