#pragma once
// Differentiable building blocks. Each op is a forward/backward pair over
// row-major tensors, templated on the storage type so the same code is
// gradient-checked in double. Reductions accumulate in double.
//
// Backward functions accumulate into the gradient outputs (+=); callers zero
// them once per step.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "nep/kernels.hpp"
#include "nep/tensor.hpp"

namespace nep::nn {

inline constexpr double kNormEps = 1e-5;

template <class T>
void transpose(const T* src, std::size_t rows, std::size_t cols, T* dst) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

// y[S x out] = x[S x in] * w[in x out]
template <class T>
void linear_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, BasicTensor<T>& y) {
  const std::size_t in = w.dims.at(0), out = w.dims.at(1);
  require(x.cols() == in, ErrorKind::Config,
          "linear: input width " + std::to_string(x.cols()) + " != " + std::to_string(in));
  const std::size_t s = x.rows();
  if (y.dims != std::vector<std::size_t>{s, out}) y = BasicTensor<T>({s, out});
  kernels::gemm<T>(s, out, in, x.ptr(), in, w.ptr(), out, y.ptr(), out, false);
}

template <class T>
void linear_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& dy,
                     BasicTensor<T>* dx, BasicTensor<T>* dw) {
  const std::size_t in = w.dims[0], out = w.dims[1], s = x.rows();
  if (dx) {
    std::vector<T> wt(in * out);
    transpose(w.ptr(), in, out, wt.data());
    kernels::gemm<T>(s, in, out, dy.ptr(), out, wt.data(), in, dx->ptr(), in, true);
  }
  if (dw) {
    std::vector<T> xt(in * s);
    transpose(x.ptr(), s, in, xt.data());
    kernels::gemm<T>(in, out, s, xt.data(), s, dy.ptr(), out, dw->ptr(), out, true);
  }
}

// Row-wise x / sqrt(mean(x^2) + eps) * gain. inv_rms receives one value per row.
template <class T>
void rms_norm_forward(const BasicTensor<T>& x, const BasicTensor<T>& gain, BasicTensor<T>& y,
                      std::vector<double>& inv_rms) {
  const std::size_t d = x.cols(), s = x.rows();
  require(gain.size() == d, ErrorKind::Config, "rms_norm: gain width mismatch");
  if (!y.same_shape(x)) y = BasicTensor<T>(x.dims);
  inv_rms.assign(s, 0.0);
  for (std::size_t i = 0; i < s; ++i) {
    const T* xr = x.ptr() + i * d;
    double ss = 0;
    for (std::size_t j = 0; j < d; ++j) ss += double(xr[j]) * double(xr[j]);
    const double r = 1.0 / std::sqrt(ss / double(d) + kNormEps);
    inv_rms[i] = r;
    T* yr = y.ptr() + i * d;
    for (std::size_t j = 0; j < d; ++j) yr[j] = T(double(xr[j]) * r * double(gain.data[j]));
  }
}

template <class T>
void rms_norm_backward(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                       const std::vector<double>& inv_rms, const BasicTensor<T>& dy,
                       BasicTensor<T>* dx, BasicTensor<T>* dgain) {
  const std::size_t d = x.cols(), s = x.rows();
  for (std::size_t i = 0; i < s; ++i) {
    const T* xr = x.ptr() + i * d;
    const T* gr = dy.ptr() + i * d;
    const double r = inv_rms[i];
    double proj = 0;
    for (std::size_t j = 0; j < d; ++j) proj += double(gr[j]) * double(gain.data[j]) * double(xr[j]);
    if (dx) {
      T* out = dx->ptr() + i * d;
      const double c = r * r * r * proj / double(d);
      for (std::size_t j = 0; j < d; ++j)
        out[j] += T(r * double(gain.data[j]) * double(gr[j]) - double(xr[j]) * c);
    }
    if (dgain)
      for (std::size_t j = 0; j < d; ++j) dgain->data[j] += T(double(gr[j]) * double(xr[j]) * r);
  }
}

// tanh-approximated GELU
template <class T>
void gelu_forward(const BasicTensor<T>& x, BasicTensor<T>& y) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  if (!y.same_shape(x)) y = BasicTensor<T>(x.dims);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.data[i];
    y.data[i] = T(0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v))));
  }
}

template <class T>
void gelu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy, BasicTensor<T>& dx) {
  constexpr double c = 0.7978845608028654;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.data[i];
    const double t = std::tanh(c * (v + 0.044715 * v * v * v));
    const double dt = (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * v * v);
    dx.data[i] += T(double(dy.data[i]) * (0.5 * (1.0 + t) + 0.5 * v * dt));
  }
}

template <class T>
void relu_forward(const BasicTensor<T>& x, BasicTensor<T>& y) {
  if (!y.same_shape(x)) y = BasicTensor<T>(x.dims);
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
}

template <class T>
void relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy, BasicTensor<T>& dx) {
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x.data[i] > T(0)) dx.data[i] += dy.data[i];
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// out.row(i) += table.row(ids[i])
template <class T>
void embedding_forward(const BasicTensor<T>& table, std::span<const int> ids, BasicTensor<T>& out) {
  const std::size_t d = table.cols();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && std::size_t(ids[i]) < table.rows(), ErrorKind::Input,
            "embedding id out of range");
    kernels::axpy<T>(T(1), table.ptr() + std::size_t(ids[i]) * d, out.ptr() + i * d, d);
  }
}

template <class T>
void embedding_backward(std::span<const int> ids, const BasicTensor<T>& dout, BasicTensor<T>& dtable) {
  const std::size_t d = dtable.cols();
  for (std::size_t i = 0; i < ids.size(); ++i)
    kernels::axpy<T>(T(1), dout.ptr() + i * d, dtable.ptr() + std::size_t(ids[i]) * d, d);
}

// Numerically stable log-softmax of one row, in double.
template <class T>
std::vector<double> log_softmax_row(std::span<const T> logits) {
  double mx = -INFINITY;
  for (T v : logits) mx = std::max(mx, double(v));
  double z = 0;
  for (T v : logits) z += std::exp(double(v) - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = double(logits[i]) - lz;
  return out;
}

struct CrossEntropyResult {
  double loss = 0;
  std::vector<double> per_row;  // -log p(target) for each row
};

// Weighted mean of -log softmax(logits)[target]; rows with weight 0 are
// excluded. If dlogits is given it is overwritten with the gradient of the loss.
template <class T>
CrossEntropyResult cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets,
                                 std::span<const float> weights, BasicTensor<T>* dlogits) {
  const std::size_t n = logits.rows(), v = logits.cols();
  require(targets.size() == n && weights.size() == n, ErrorKind::Config,
          "cross_entropy: targets/weights length mismatch");
  CrossEntropyResult res;
  res.per_row.assign(n, 0.0);
  double wsum = 0;
  for (float w : weights) wsum += w;
  if (dlogits) {
    if (!dlogits->same_shape(logits)) *dlogits = BasicTensor<T>(logits.dims);
    dlogits->zero();
  }
  for (std::size_t i = 0; i < n; ++i) {
    require(targets[i] >= 0 && std::size_t(targets[i]) < v, ErrorKind::Input,
            "cross_entropy: target " + std::to_string(targets[i]) + " out of vocabulary");
    const auto lsm = log_softmax_row(logits.row(i));
    res.per_row[i] = -lsm[std::size_t(targets[i])];
    if (wsum <= 0 || weights[i] == 0.0f) continue;
    const double w = double(weights[i]) / wsum;
    res.loss += w * res.per_row[i];
    if (dlogits) {
      T* g = dlogits->ptr() + i * v;
      for (std::size_t j = 0; j < v; ++j) {
        const double p = std::exp(lsm[j]);
        g[j] += T(w * (p - (j == std::size_t(targets[i]) ? 1.0 : 0.0)));
      }
    }
  }
  return res;
}

}  // namespace nep::nn
