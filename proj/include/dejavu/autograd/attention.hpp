#pragma once

#include <cmath>
#include <vector>

#include "dejavu/autograd/conv.hpp"

namespace dejavu::ag {

// [N,C,H,W] -> [N, (H/p)*(W/p), C*p*p]. Tokens are raster-ordered over the
// patch grid; features are ordered (channel, row-in-patch, col-in-patch).
template <typename T>
Var<T> patchify(const Var<T>& x, int p) {
  detail::require_rank4(x.shape(), "patchify");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (p <= 0 || H % p || W % p)
    throw ConfigError("patchify: " + std::to_string(H) + "x" + std::to_string(W) + " not divisible by patch " +
                      std::to_string(p));
  const int gh = H / p, gw = W / p, L = gh * gw, F = C * p * p;
  Tensor<T> out(Shape{N, L, F});
  auto index = [=](int n, int c, int y, int xx) {
    return ((static_cast<std::size_t>(n) * C + c) * H + y) * W + xx;
  };
  for (int n = 0; n < N; ++n)
    for (int ty = 0; ty < gh; ++ty)
      for (int tx = 0; tx < gw; ++tx)
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < p; ++i)
            for (int j = 0; j < p; ++j)
              out[(static_cast<std::size_t>(n) * L + ty * gw + tx) * F + (c * p + i) * p + j] =
                  x.value()[index(n, c, ty * p + i, tx * p + j)];
  auto* px = x.node();
  return make_result<T>(std::move(out), {x}, [px, N, C, gh, gw, L, F, p, index](Node<T>& o) {
    auto& g = px->grad_ref();
    for (int n = 0; n < N; ++n)
      for (int ty = 0; ty < gh; ++ty)
        for (int tx = 0; tx < gw; ++tx)
          for (int c = 0; c < C; ++c)
            for (int i = 0; i < p; ++i)
              for (int j = 0; j < p; ++j)
                g[index(n, c, ty * p + i, tx * p + j)] +=
                    o.grad[(static_cast<std::size_t>(n) * L + ty * gw + tx) * F + (c * p + i) * p + j];
  });
}

// Token-wise affine map: x [N,L,in], weight [in,out], bias [out] -> [N,L,out].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  if (x.shape().size() != 3) throw DimensionError("linear: expected N x L x F, got " + shape_str(x.shape()));
  const int N = x.dim(0), L = x.dim(1), In = x.dim(2), Out = weight.dim(1);
  if (weight.dim(0) != In) throw DimensionError("linear: weight expects " + std::to_string(weight.dim(0)) + " inputs");
  const int R = N * L;
  Tensor<T> out(Shape{N, L, Out});
  MapMat<T> O(out.data(), R, Out);
  O.noalias() = ConstMapMat<T>(x.value().data(), R, In) * ConstMapMat<T>(weight.value().data(), In, Out);
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < Out; ++c) O(r, c) += bias.value()[c];
  auto *px = x.node(), *pw = weight.node(), *pb = bias.node();
  return make_result<T>(std::move(out), {x, weight, bias}, [px, pw, pb, R, In, Out](Node<T>& o) {
    ConstMapMat<T> dO(o.grad.data(), R, Out);
    if (pb->requires_grad) {
      auto& gb = pb->grad_ref();
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < Out; ++c) gb[c] += dO(r, c);
    }
    if (pw->requires_grad)
      MapMat<T>(pw->grad_ref().data(), In, Out).noalias() += ConstMapMat<T>(px->value.data(), R, In).transpose() * dO;
    if (px->requires_grad)
      MapMat<T>(px->grad_ref().data(), R, In).noalias() +=
          dO * ConstMapMat<T>(pw->value.data(), In, Out).transpose();
  });
}

// Scaled dot-product attention over `heads` equal slices of the feature axis.
// q [N,Lq,d], k and v [N,Lk,d]. When `weights_out` is given it receives the
// softmax rows as [N, heads, Lq, Lk].
template <typename T>
Var<T> multi_head_attention_core(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads,
                                 Tensor<T>* weights_out = nullptr) {
  const int N = q.dim(0), Lq = q.dim(1), d = q.dim(2), Lk = k.dim(1);
  if (k.dim(2) != d || v.dim(2) != d || v.dim(1) != Lk || k.dim(0) != N || v.dim(0) != N)
    throw DimensionError("attention: q/k/v shape mismatch");
  if (heads <= 0 || d % heads) throw ConfigError("attention: heads must divide the embedding dim");
  const int dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Tensor<T> attn(Shape{N, heads, Lq, Lk});
  Tensor<T> out(Shape{N, Lq, d});
  using Stride = Eigen::OuterStride<>;
  using Block = Eigen::Map<const RowMat<T>, 0, Stride>;
  using MBlock = Eigen::Map<RowMat<T>, 0, Stride>;
  for (int n = 0; n < N; ++n)
    for (int h = 0; h < heads; ++h) {
      Block Q(q.value().data() + static_cast<std::size_t>(n) * Lq * d + h * dh, Lq, dh, Stride(d));
      Block K(k.value().data() + static_cast<std::size_t>(n) * Lk * d + h * dh, Lk, dh, Stride(d));
      Block V(v.value().data() + static_cast<std::size_t>(n) * Lk * d + h * dh, Lk, dh, Stride(d));
      MapMat<T> A(attn.data() + (static_cast<std::size_t>(n) * heads + h) * Lq * Lk, Lq, Lk);
      A.noalias() = (Q * K.transpose()) * scale;
      for (int r = 0; r < Lq; ++r) {
        const T mx = A.row(r).maxCoeff();
        A.row(r) = (A.row(r).array() - mx).exp();
        A.row(r) /= A.row(r).sum();
      }
      MBlock O(out.data() + static_cast<std::size_t>(n) * Lq * d + h * dh, Lq, dh, Stride(d));
      O.noalias() = A * V;
    }
  if (weights_out) *weights_out = attn;
  auto *pq = q.node(), *pk = k.node(), *pv = v.node();
  return make_result<T>(
      std::move(out), {q, k, v}, [pq, pk, pv, N, Lq, Lk, d, dh, heads, scale, attn = std::move(attn)](Node<T>& o) {
        RowMat<T> dA(Lq, Lk), dS(Lq, Lk);
        for (int n = 0; n < N; ++n)
          for (int h = 0; h < heads; ++h) {
            Block Q(pq->value.data() + static_cast<std::size_t>(n) * Lq * d + h * dh, Lq, dh, Stride(d));
            Block K(pk->value.data() + static_cast<std::size_t>(n) * Lk * d + h * dh, Lk, dh, Stride(d));
            Block V(pv->value.data() + static_cast<std::size_t>(n) * Lk * d + h * dh, Lk, dh, Stride(d));
            Block dO(o.grad.data() + static_cast<std::size_t>(n) * Lq * d + h * dh, Lq, dh, Stride(d));
            ConstMapMat<T> A(attn.data() + (static_cast<std::size_t>(n) * heads + h) * Lq * Lk, Lq, Lk);
            if (pv->requires_grad) {
              MBlock gV(pv->grad_ref().data() + static_cast<std::size_t>(n) * Lk * d + h * dh, Lk, dh, Stride(d));
              gV.noalias() += A.transpose() * dO;
            }
            if (!pq->requires_grad && !pk->requires_grad) continue;
            dA.noalias() = dO * V.transpose();
            for (int r = 0; r < Lq; ++r) {
              const T dot = (dA.row(r).array() * A.row(r).array()).sum();
              dS.row(r) = A.row(r).array() * (dA.row(r).array() - dot);
            }
            if (pq->requires_grad) {
              MBlock gQ(pq->grad_ref().data() + static_cast<std::size_t>(n) * Lq * d + h * dh, Lq, dh, Stride(d));
              gQ.noalias() += (dS * K) * scale;
            }
            if (pk->requires_grad) {
              MBlock gK(pk->grad_ref().data() + static_cast<std::size_t>(n) * Lk * d + h * dh, Lk, dh, Stride(d));
              gK.noalias() += (dS.transpose() * Q) * scale;
            }
          }
      });
}

// [N, gh*gw, d] -> [N, d, gh, gw].
template <typename T>
Var<T> tokens_to_grid(const Var<T>& x, int gh, int gw) {
  if (x.shape().size() != 3 || x.dim(1) != gh * gw) throw DimensionError("tokens_to_grid: token count mismatch");
  const int N = x.dim(0), L = x.dim(1), d = x.dim(2);
  Tensor<T> out(Shape{N, d, gh, gw});
  for (int n = 0; n < N; ++n)
    for (int t = 0; t < L; ++t)
      for (int c = 0; c < d; ++c)
        out[(static_cast<std::size_t>(n) * d + c) * L + t] = x.value()[(static_cast<std::size_t>(n) * L + t) * d + c];
  auto* px = x.node();
  return make_result<T>(std::move(out), {x}, [px, N, L, d](Node<T>& o) {
    auto& g = px->grad_ref();
    for (int n = 0; n < N; ++n)
      for (int t = 0; t < L; ++t)
        for (int c = 0; c < d; ++c)
          g[(static_cast<std::size_t>(n) * L + t) * d + c] += o.grad[(static_cast<std::size_t>(n) * d + c) * L + t];
  });
}

// Global average pool [N,C,H,W] -> [N,1,C] (a single token per image).
template <typename T>
Var<T> global_avg_pool_token(const Var<T>& x) {
  detail::require_rank4(x.shape(), "global_avg_pool_token");
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t P = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const T inv = T(1) / static_cast<T>(P);
  Tensor<T> out(Shape{N, 1, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      T s = 0;
      const T* src = x.value().data() + (static_cast<std::size_t>(n) * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) s += src[i];
      out[static_cast<std::size_t>(n) * C + c] = s * inv;
    }
  auto* px = x.node();
  return make_result<T>(std::move(out), {x}, [px, N, C, P, inv](Node<T>& o) {
    auto& g = px->grad_ref();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const T s = o.grad[static_cast<std::size_t>(n) * C + c] * inv;
        T* dst = g.data() + (static_cast<std::size_t>(n) * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) dst[i] += s;
      }
  });
}

}  // namespace dejavu::ag
