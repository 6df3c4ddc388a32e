#pragma once
// 2-D convolution over HWC feature maps via im2col + GEMM, plus global
// average pooling. Used by the critic.

#include "nep/nn/ops.hpp"

namespace nep::nn {

struct ConvShape {
  std::size_t in_h = 0, in_w = 0, in_c = 0;
  std::size_t kernel = 3, stride = 1, pad = 1;
  std::size_t out_c = 0;

  std::size_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  std::size_t patch() const { return kernel * kernel * in_c; }
};

// cols[(oh*out_w+ow) x (ky*k+kx)*in_c + c]
template <class T>
void im2col(const T* x, const ConvShape& s, std::vector<T>& cols) {
  const std::size_t oh = s.out_h(), ow = s.out_w(), pk = s.patch();
  cols.assign(oh * ow * pk, T(0));
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t xo = 0; xo < ow; ++xo) {
      T* dst = cols.data() + (y * ow + xo) * pk;
      for (std::size_t ky = 0; ky < s.kernel; ++ky) {
        const long iy = long(y * s.stride + ky) - long(s.pad);
        if (iy < 0 || iy >= long(s.in_h)) continue;
        for (std::size_t kx = 0; kx < s.kernel; ++kx) {
          const long ix = long(xo * s.stride + kx) - long(s.pad);
          if (ix < 0 || ix >= long(s.in_w)) continue;
          const T* src = x + (std::size_t(iy) * s.in_w + std::size_t(ix)) * s.in_c;
          std::copy(src, src + s.in_c, dst + (ky * s.kernel + kx) * s.in_c);
        }
      }
    }
}

template <class T>
void col2im_add(const std::vector<T>& cols, const ConvShape& s, T* dx) {
  const std::size_t oh = s.out_h(), ow = s.out_w(), pk = s.patch();
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t xo = 0; xo < ow; ++xo) {
      const T* src = cols.data() + (y * ow + xo) * pk;
      for (std::size_t ky = 0; ky < s.kernel; ++ky) {
        const long iy = long(y * s.stride + ky) - long(s.pad);
        if (iy < 0 || iy >= long(s.in_h)) continue;
        for (std::size_t kx = 0; kx < s.kernel; ++kx) {
          const long ix = long(xo * s.stride + kx) - long(s.pad);
          if (ix < 0 || ix >= long(s.in_w)) continue;
          T* dst = dx + (std::size_t(iy) * s.in_w + std::size_t(ix)) * s.in_c;
          const T* g = src + (ky * s.kernel + kx) * s.in_c;
          for (std::size_t c = 0; c < s.in_c; ++c) dst[c] += g[c];
        }
      }
    }
}

// x: [in_h x in_w x in_c] flattened; w: [patch x out_c]; b: [out_c];
// y: [out_h*out_w x out_c]. cols keeps the im2col buffer for backward.
template <class T>
void conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                    const ConvShape& s, BasicTensor<T>& y, std::vector<T>& cols) {
  require(x.size() == s.in_h * s.in_w * s.in_c, ErrorKind::Config, "conv2d: input size mismatch");
  require(w.dims == std::vector<std::size_t>{s.patch(), s.out_c}, ErrorKind::Config,
          "conv2d: weight shape mismatch");
  im2col(x.ptr(), s, cols);
  const std::size_t n = s.out_h() * s.out_w();
  y = BasicTensor<T>({n, s.out_c});
  for (std::size_t i = 0; i < n; ++i) std::copy(b.data.begin(), b.data.end(), y.ptr() + i * s.out_c);
  kernels::gemm<T>(n, s.out_c, s.patch(), cols.data(), s.patch(), w.ptr(), s.out_c, y.ptr(), s.out_c,
                   true);
}

template <class T>
void conv2d_backward(const std::vector<T>& cols, const BasicTensor<T>& w, const ConvShape& s,
                     const BasicTensor<T>& dy, BasicTensor<T>* dx, BasicTensor<T>* dw,
                     BasicTensor<T>* db) {
  const std::size_t n = s.out_h() * s.out_w(), pk = s.patch();
  if (db)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < s.out_c; ++c) db->data[c] += dy.at(i, c);
  if (dw) {
    std::vector<T> ct(pk * n);
    transpose(cols.data(), n, pk, ct.data());
    kernels::gemm<T>(pk, s.out_c, n, ct.data(), n, dy.ptr(), s.out_c, dw->ptr(), s.out_c, true);
  }
  if (dx) {
    std::vector<T> wt(s.out_c * pk), dcols(n * pk);
    transpose(w.ptr(), pk, s.out_c, wt.data());
    kernels::gemm<T>(n, pk, s.out_c, dy.ptr(), s.out_c, wt.data(), pk, dcols.data(), pk, false);
    col2im_add(dcols, s, dx->ptr());
  }
}

// [n x c] -> [c] mean over rows
template <class T>
void avg_pool_forward(const BasicTensor<T>& x, BasicTensor<T>& y) {
  const std::size_t n = x.rows(), c = x.cols();
  y = BasicTensor<T>({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += x.at(i, ch);
    y.data[ch] = T(s / double(n));
  }
}

template <class T>
void avg_pool_backward(const BasicTensor<T>& dy, std::size_t n, BasicTensor<T>& dx) {
  const std::size_t c = dy.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) dx.at(i, ch) += T(double(dy.data[ch]) / double(n));
}

}  // namespace nep::nn
