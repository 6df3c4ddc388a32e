#pragma once
// Multi-head causal self-attention and the pre-norm decoder block
// (RMSNorm -> attention -> residual, RMSNorm -> GELU MLP -> residual).

#include <cmath>
#include <string_view>
#include <vector>

#include "nep/nn/ops.hpp"

namespace nep::nn {

template <class T>
struct BlockWeights {
  BasicTensor<T> attn_norm;       // [d]
  BasicTensor<T> wq, wk, wv, wo;  // [d x d]
  BasicTensor<T> ffn_norm;        // [d]
  BasicTensor<T> w1;              // [d x ffn]
  BasicTensor<T> w2;              // [ffn x d]

  static BlockWeights shaped(std::size_t d, std::size_t ffn) {
    BlockWeights w;
    w.attn_norm = BasicTensor<T>({d}, T(1));
    w.wq = BasicTensor<T>({d, d});
    w.wk = BasicTensor<T>({d, d});
    w.wv = BasicTensor<T>({d, d});
    w.wo = BasicTensor<T>({d, d});
    w.ffn_norm = BasicTensor<T>({d}, T(1));
    w.w1 = BasicTensor<T>({d, ffn});
    w.w2 = BasicTensor<T>({ffn, d});
    return w;
  }

  template <class F>
  void visit(F&& f) {
    f(std::string_view("attn_norm"), attn_norm);
    f(std::string_view("ffn_norm"), ffn_norm);
    f(std::string_view("w1"), w1);
    f(std::string_view("w2"), w2);
    f(std::string_view("wk"), wk);
    f(std::string_view("wo"), wo);
    f(std::string_view("wq"), wq);
    f(std::string_view("wv"), wv);
  }
  template <class F>
  void visit(F&& f) const {
    const_cast<BlockWeights*>(this)->visit([&](std::string_view n, BasicTensor<T>& t) {
      f(n, static_cast<const BasicTensor<T>&>(t));
    });
  }
};

// Keys and values of one layer, grown row by row during incremental decoding.
template <class T>
struct LayerKv {
  BasicTensor<T> k, v;  // [capacity x d]
  std::size_t len = 0;

  void reset(std::size_t capacity, std::size_t d) {
    k = BasicTensor<T>({capacity, d});
    v = BasicTensor<T>({capacity, d});
    len = 0;
  }
};

// Attends one query row over the first n_keys rows of K/V (row stride d).
// probs, if given, receives n_keys weights per head at stride prob_stride.
template <class T>
void attend_row(const T* q, const T* keys, const T* values, std::size_t n_keys, std::size_t d,
                std::size_t heads, T* out, T* probs, std::size_t prob_stride) {
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(double(dh));
  std::vector<double> score(n_keys);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n_keys; ++j) {
      score[j] = double(kernels::dot<T>(q + off, keys + j * d + off, dh)) * scale;
      mx = std::max(mx, score[j]);
    }
    double z = 0;
    for (std::size_t j = 0; j < n_keys; ++j) {
      score[j] = std::exp(score[j] - mx);
      z += score[j];
    }
    T* o = out + off;
    std::fill(o, o + dh, T(0));
    for (std::size_t j = 0; j < n_keys; ++j) {
      const T p = T(score[j] / z);
      if (probs) probs[h * prob_stride + j] = p;
      kernels::axpy<T>(p, values + j * d + off, o, dh);
    }
  }
}

// Full-sequence attention core: q, k, v, out are [s x d]. probs, if given,
// is [heads x s x s] (entries above the diagonal untouched when causal).
template <class T>
void attention_forward(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                       std::size_t heads, bool causal, BasicTensor<T>& out, std::vector<T>* probs) {
  const std::size_t s = q.rows(), d = q.cols();
  require(d % heads == 0, ErrorKind::Config, "attention: d not divisible by heads");
  require(k.rows() == s && v.rows() == s && k.cols() == d && v.cols() == d, ErrorKind::Config,
          "attention: q/k/v shape mismatch");
  if (!out.same_shape(q)) out = BasicTensor<T>(q.dims);
  if (probs) probs->assign(heads * s * s, T(0));
  for (std::size_t i = 0; i < s; ++i) {
    const std::size_t n = causal ? i + 1 : s;
    attend_row<T>(q.ptr() + i * d, k.ptr(), v.ptr(), n, d, heads, out.ptr() + i * d,
                  probs ? probs->data() + i * s : nullptr, s * s);
  }
}

template <class T>
void attention_backward(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                        const std::vector<T>& probs, std::size_t heads, bool causal,
                        const BasicTensor<T>& dout, BasicTensor<T>& dq, BasicTensor<T>& dk,
                        BasicTensor<T>& dv) {
  const std::size_t s = q.rows(), d = q.cols(), dh = d / heads;
  const T scale = T(1.0 / std::sqrt(double(dh)));
  std::vector<double> dp(s);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < s; ++i) {
      const std::size_t n = causal ? i + 1 : s;
      const T* p = probs.data() + h * s * s + i * s;
      const T* go = dout.ptr() + i * d + off;
      double acc = 0;
      for (std::size_t j = 0; j < n; ++j) {
        dp[j] = double(kernels::dot<T>(go, v.ptr() + j * d + off, dh));
        acc += double(p[j]) * dp[j];
      }
      for (std::size_t j = 0; j < n; ++j) {
        const T ds = T(double(p[j]) * (dp[j] - acc));
        kernels::axpy<T>(scale * ds, k.ptr() + j * d + off, dq.ptr() + i * d + off, dh);
        kernels::axpy<T>(scale * ds, q.ptr() + i * d + off, dk.ptr() + j * d + off, dh);
        kernels::axpy<T>(p[j], go, dv.ptr() + j * d + off, dh);
      }
    }
  }
}

// Activations saved by block_forward for block_backward.
template <class T>
struct BlockTape {
  BasicTensor<T> x, h1, q, k, v, attn, x2, h2, u, g;
  std::vector<double> r1, r2;
  std::vector<T> probs;
};

// One decoder block over rows x [s x d]. With kv, the rows are appended after
// kv->len cached rows and attend to the whole cache; otherwise they attend to
// each other. tape is only meaningful without kv.
template <class T>
void block_forward(const BasicTensor<T>& x, const BlockWeights<T>& w, std::size_t heads,
                   bool causal, LayerKv<T>* kv, BlockTape<T>* tape, BasicTensor<T>& y) {
  const std::size_t s = x.rows(), d = x.cols();
  require(d % heads == 0, ErrorKind::Config, "block: d not divisible by heads");
  require(w.wq.dims.at(0) == d, ErrorKind::Config, "block: weight width mismatch");
  BlockTape<T> local;
  BlockTape<T>& t = tape ? *tape : local;
  t.x = x;
  rms_norm_forward(x, w.attn_norm, t.h1, t.r1);
  linear_forward(t.h1, w.wq, t.q);
  linear_forward(t.h1, w.wk, t.k);
  linear_forward(t.h1, w.wv, t.v);
  if (kv) {
    require(kv->len + s <= kv->k.rows(), ErrorKind::Config, "block: kv cache capacity exceeded");
    std::copy(t.k.data.begin(), t.k.data.end(), kv->k.ptr() + kv->len * d);
    std::copy(t.v.data.begin(), t.v.data.end(), kv->v.ptr() + kv->len * d);
    t.attn = BasicTensor<T>({s, d});
    for (std::size_t i = 0; i < s; ++i) {
      const std::size_t n = causal ? kv->len + i + 1 : kv->len + s;
      attend_row<T>(t.q.ptr() + i * d, kv->k.ptr(), kv->v.ptr(), n, d, heads,
                    t.attn.ptr() + i * d, nullptr, 0);
    }
    kv->len += s;
  } else {
    attention_forward(t.q, t.k, t.v, heads, causal, t.attn, tape ? &t.probs : nullptr);
  }
  linear_forward(t.attn, w.wo, t.x2);
  for (std::size_t i = 0; i < t.x2.size(); ++i) t.x2.data[i] += x.data[i];
  rms_norm_forward(t.x2, w.ffn_norm, t.h2, t.r2);
  linear_forward(t.h2, w.w1, t.u);
  gelu_forward(t.u, t.g);
  linear_forward(t.g, w.w2, y);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += t.x2.data[i];
}

// dx is overwritten; weight gradients accumulate into grads.
template <class T>
void block_backward(const BlockTape<T>& t, const BlockWeights<T>& w, std::size_t heads, bool causal,
                    const BasicTensor<T>& dy, BasicTensor<T>& dx, BlockWeights<T>& grads) {
  const auto& dims = t.x.dims;
  BasicTensor<T> dg(t.g.dims), du(t.u.dims), dh2(dims), dx2 = dy;
  linear_backward(t.g, w.w2, dy, &dg, &grads.w2);
  gelu_backward(t.u, dg, du);
  linear_backward(t.h2, w.w1, du, &dh2, &grads.w1);
  rms_norm_backward(t.x2, w.ffn_norm, t.r2, dh2, &dx2, &grads.ffn_norm);

  BasicTensor<T> dattn(dims), dq(dims), dk(dims), dv(dims), dh1(dims);
  linear_backward(t.attn, w.wo, dx2, &dattn, &grads.wo);
  attention_backward(t.q, t.k, t.v, t.probs, heads, causal, dattn, dq, dk, dv);
  linear_backward(t.h1, w.wq, dq, &dh1, &grads.wq);
  linear_backward(t.h1, w.wk, dk, &dh1, &grads.wk);
  linear_backward(t.h1, w.wv, dv, &dh1, &grads.wv);
  dx = dx2;
  rms_norm_backward(t.x, w.attn_norm, t.r1, dh1, &dx, &grads.attn_norm);
}

}  // namespace nep::nn
