#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "dejavu/autograd/var.hpp"

namespace dejavu::ag {

namespace detail {

inline void require_rank4(const Shape& s, const char* what) {
  if (s.size() != 4) throw DimensionError(std::string(what) + ": expected N x C x H x W, got " + shape_str(s));
}

template <typename T>
void add_into(Node<T>* n, const Tensor<T>& g) {
  if (n->requires_grad) n->grad_ref() += g;
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  a.value().require_same_shape(b.value(), "add");
  auto* pa = a.node();
  auto* pb = b.node();
  return make_result<T>(a.value() + b.value(), {a, b}, [pa, pb](Node<T>& o) {
    detail::add_into(pa, o.grad);
    detail::add_into(pb, o.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  a.value().require_same_shape(b.value(), "sub");
  auto* pa = a.node();
  auto* pb = b.node();
  return make_result<T>(a.value() - b.value(), {a, b}, [pa, pb](Node<T>& o) {
    detail::add_into(pa, o.grad);
    if (pb->requires_grad) pb->grad_ref() -= o.grad;
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  a.value().require_same_shape(b.value(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto* pa = a.node();
  auto* pb = b.node();
  return make_result<T>(std::move(out), {a, b}, [pa, pb](Node<T>& o) {
    if (pa->requires_grad) {
      auto& g = pa->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pa->value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  auto* pa = a.node();
  return make_result<T>(a.value() * s, {a}, [pa, s](Node<T>& o) {
    if (pa->requires_grad) {
      auto& g = pa->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * s;
    }
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v += s;
  auto* pa = a.node();
  return make_result<T>(std::move(out), {a}, [pa](Node<T>& o) { detail::add_into(pa, o.grad); });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v = v > T(0) ? v : T(0);
  auto* pa = a.node();
  return make_result<T>(std::move(out), {a}, [pa](Node<T>& o) {
    auto& g = pa->grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (pa->value[i] > T(0)) g[i] += o.grad[i];
  });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v = std::exp(v);
  auto* pa = a.node();
  auto res = make_result<T>(std::move(out), {a}, nullptr);
  if (res.requires_grad()) {
    auto* po = res.node();
    po->backward_fn = [pa](Node<T>& o) {
      auto& g = pa->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * o.value[i];
    };
  }
  return res;
}

template <typename T>
Var<T> square(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v = v * v;
  auto* pa = a.node();
  return make_result<T>(std::move(out), {a}, [pa](Node<T>& o) {
    auto& g = pa->grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += T(2) * pa->value[i] * o.grad[i];
  });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  auto* pa = a.node();
  return make_result<T>(Tensor<T>(Shape{1}, a.value().sum()), {a}, [pa](Node<T>& o) {
    auto& g = pa->grad_ref();
    const T s = o.grad[0];
    for (auto& v : g.vec()) v += s;
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  const T inv = T(1) / static_cast<T>(a.value().size());
  auto* pa = a.node();
  return make_result<T>(Tensor<T>(Shape{1}, a.value().sum() * inv), {a}, [pa, inv](Node<T>& o) {
    auto& g = pa->grad_ref();
    const T s = o.grad[0] * inv;
    for (auto& v : g.vec()) v += s;
  });
}

// Sum of scalars with fixed coefficients: sum_i w_i * x_i.
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& xs, const std::vector<T>& w) {
  if (xs.size() != w.size() || xs.empty()) throw DimensionError("weighted_sum: size mismatch");
  Tensor<T> out(xs.front().shape());
  for (std::size_t k = 0; k < xs.size(); ++k) {
    xs[k].value().require_same_shape(out, "weighted_sum");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w[k] * xs[k].value()[i];
  }
  std::vector<Node<T>*> ps;
  for (const auto& x : xs) ps.push_back(x.node());
  return make_result<T>(std::move(out), xs, [ps, w](Node<T>& o) {
    for (std::size_t k = 0; k < ps.size(); ++k) {
      if (!ps[k]->requires_grad) continue;
      auto& g = ps[k]->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += w[k] * o.grad[i];
    }
  });
}

// Mean over channels: [N,C,H,W] -> [N,1,H,W].
template <typename T>
Var<T> channel_mean(const Var<T>& x) {
  detail::require_rank4(x.shape(), "channel_mean");
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t P = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor<T> out(Shape{N, 1, x.dim(2), x.dim(3)});
  const T inv = T(1) / C;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* src = x.value().data() + (static_cast<std::size_t>(n) * C + c) * P;
      T* dst = out.data() + static_cast<std::size_t>(n) * P;
      for (std::size_t i = 0; i < P; ++i) dst[i] += src[i] * inv;
    }
  auto* px = x.node();
  return make_result<T>(std::move(out), {x}, [px, N, C, P, inv](Node<T>& o) {
    auto& g = px->grad_ref();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        T* dst = g.data() + (static_cast<std::size_t>(n) * C + c) * P;
        const T* src = o.grad.data() + static_cast<std::size_t>(n) * P;
        for (std::size_t i = 0; i < P; ++i) dst[i] += src[i] * inv;
      }
  });
}

// [N,1,H,W] * [N,C,H,W] with the single channel broadcast.
template <typename T>
Var<T> broadcast_mul(const Var<T>& m, const Var<T>& x) {
  detail::require_rank4(m.shape(), "broadcast_mul");
  detail::require_rank4(x.shape(), "broadcast_mul");
  if (m.dim(1) != 1 || m.dim(0) != x.dim(0) || m.dim(2) != x.dim(2) || m.dim(3) != x.dim(3))
    throw DimensionError("broadcast_mul: incompatible " + shape_str(m.shape()) + " and " + shape_str(x.shape()));
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t P = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor<T> out(x.shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * P;
      const T* mm = m.value().data() + static_cast<std::size_t>(n) * P;
      for (std::size_t i = 0; i < P; ++i) out[off + i] = mm[i] * x.value()[off + i];
    }
  auto* pm = m.node();
  auto* px = x.node();
  return make_result<T>(std::move(out), {m, x}, [pm, px, N, C, P](Node<T>& o) {
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const std::size_t off = (static_cast<std::size_t>(n) * C + c) * P;
        const std::size_t moff = static_cast<std::size_t>(n) * P;
        if (px->requires_grad) {
          auto& g = px->grad_ref();
          for (std::size_t i = 0; i < P; ++i) g[off + i] += o.grad[off + i] * pm->value[moff + i];
        }
        if (pm->requires_grad) {
          auto& g = pm->grad_ref();
          for (std::size_t i = 0; i < P; ++i) g[moff + i] += o.grad[off + i] * px->value[off + i];
        }
      }
  });
}

// Concatenates [N,Ci,H,W] tensors along channels, in order.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw DimensionError("concat_channels: empty list");
  for (const auto& x : xs) detail::require_rank4(x.shape(), "concat_channels");
  const int N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  int C = 0;
  for (const auto& x : xs) {
    if (x.dim(0) != N || x.dim(2) != H || x.dim(3) != W)
      throw DimensionError("concat_channels: spatial/batch mismatch " + shape_str(x.shape()));
    C += x.dim(1);
  }
  const std::size_t P = static_cast<std::size_t>(H) * W;
  Tensor<T> out(Shape{N, C, H, W});
  std::vector<int> offsets;
  int c0 = 0;
  for (const auto& x : xs) {
    offsets.push_back(c0);
    const int ci = x.dim(1);
    for (int n = 0; n < N; ++n)
      std::copy_n(x.value().data() + static_cast<std::size_t>(n) * ci * P, ci * P,
                  out.data() + (static_cast<std::size_t>(n) * C + c0) * P);
    c0 += ci;
  }
  std::vector<Node<T>*> ps;
  for (const auto& x : xs) ps.push_back(x.node());
  return make_result<T>(std::move(out), xs, [ps, offsets, N, C, P](Node<T>& o) {
    for (std::size_t k = 0; k < ps.size(); ++k) {
      if (!ps[k]->requires_grad) continue;
      auto& g = ps[k]->grad_ref();
      const int ci = ps[k]->value.dim(1);
      for (int n = 0; n < N; ++n) {
        const T* src = o.grad.data() + (static_cast<std::size_t>(n) * C + offsets[k]) * P;
        T* dst = g.data() + static_cast<std::size_t>(n) * ci * P;
        for (std::size_t i = 0; i < ci * P; ++i) dst[i] += src[i];
      }
    }
  });
}

// Channel range [c0, c1) of a [N,C,H,W] tensor.
template <typename T>
Var<T> slice_channels(const Var<T>& x, int c0, int c1) {
  detail::require_rank4(x.shape(), "slice_channels");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (c0 < 0 || c1 > C || c0 >= c1) throw DimensionError("slice_channels: bad range");
  const std::size_t P = static_cast<std::size_t>(H) * W;
  const int K = c1 - c0;
  Tensor<T> out(Shape{N, K, H, W});
  for (int n = 0; n < N; ++n)
    std::copy_n(x.value().data() + (static_cast<std::size_t>(n) * C + c0) * P, K * P,
                out.data() + static_cast<std::size_t>(n) * K * P);
  auto* px = x.node();
  return make_result<T>(std::move(out), {x}, [px, N, C, K, c0, P](Node<T>& o) {
    auto& g = px->grad_ref();
    for (int n = 0; n < N; ++n) {
      T* dst = g.data() + (static_cast<std::size_t>(n) * C + c0) * P;
      const T* src = o.grad.data() + static_cast<std::size_t>(n) * K * P;
      for (std::size_t i = 0; i < K * P; ++i) dst[i] += src[i];
    }
  });
}

// Softmax across the channel axis of [N,C,H,W].
template <typename T>
Var<T> softmax_channels(const Var<T>& x) {
  detail::require_rank4(x.shape(), "softmax_channels");
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t P = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor<T> out(x.shape());
  const T* in = x.value().data();
  for (int n = 0; n < N; ++n)
    for (std::size_t i = 0; i < P; ++i) {
      const std::size_t base = static_cast<std::size_t>(n) * C * P + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (int c = 0; c < C; ++c) mx = std::max(mx, in[base + c * P]);
      T s = 0;
      for (int c = 0; c < C; ++c) s += (out[base + c * P] = std::exp(in[base + c * P] - mx));
      for (int c = 0; c < C; ++c) out[base + c * P] /= s;
    }
  auto* px = x.node();
  auto res = make_result<T>(std::move(out), {x}, nullptr);
  if (res.requires_grad())
    res.node()->backward_fn = [px, N, C, P](Node<T>& o) {
      auto& g = px->grad_ref();
      for (int n = 0; n < N; ++n)
        for (std::size_t i = 0; i < P; ++i) {
          const std::size_t base = static_cast<std::size_t>(n) * C * P + i;
          T dot = 0;
          for (int c = 0; c < C; ++c) dot += o.grad[base + c * P] * o.value[base + c * P];
          for (int c = 0; c < C; ++c) g[base + c * P] += o.value[base + c * P] * (o.grad[base + c * P] - dot);
        }
    };
  return res;
}

// x / sqrt(sum_c x^2 + eps) per pixel of [N,C,H,W].
template <typename T>
Var<T> l2_normalize_channels(const Var<T>& x, T eps = T(1e-10)) {
  detail::require_rank4(x.shape(), "l2_normalize_channels");
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t P = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor<T> out(x.shape());
  std::vector<T> inv_norm(static_cast<std::size_t>(N) * P);
  const T* in = x.value().data();
  for (int n = 0; n < N; ++n)
    for (std::size_t i = 0; i < P; ++i) {
      const std::size_t base = static_cast<std::size_t>(n) * C * P + i;
      T s = eps;
      for (int c = 0; c < C; ++c) s += in[base + c * P] * in[base + c * P];
      const T inv = T(1) / std::sqrt(s);
      inv_norm[static_cast<std::size_t>(n) * P + i] = inv;
      for (int c = 0; c < C; ++c) out[base + c * P] = in[base + c * P] * inv;
    }
  auto* px = x.node();
  auto res = make_result<T>(std::move(out), {x}, nullptr);
  if (res.requires_grad())
    res.node()->backward_fn = [px, N, C, P, inv_norm = std::move(inv_norm)](Node<T>& o) {
      auto& g = px->grad_ref();
      for (int n = 0; n < N; ++n)
        for (std::size_t i = 0; i < P; ++i) {
          const std::size_t base = static_cast<std::size_t>(n) * C * P + i;
          T dot = 0;
          for (int c = 0; c < C; ++c) dot += o.grad[base + c * P] * o.value[base + c * P];
          const T inv = inv_norm[static_cast<std::size_t>(n) * P + i];
          for (int c = 0; c < C; ++c) g[base + c * P] += inv * (o.grad[base + c * P] - o.value[base + c * P] * dot);
        }
    };
  return res;
}

// Mean over valid pixels of -log p[label] for probabilities [N,C,H,W],
// labels [N,H,W] and a 0/1 validity mask [N,H,W].
template <typename T>
Var<T> cross_entropy_prob(const Var<T>& prob, const Tensor<int>& labels, const Tensor<T>& valid) {
  detail::require_rank4(prob.shape(), "cross_entropy_prob");
  const int N = prob.dim(0), C = prob.dim(1);
  const std::size_t P = static_cast<std::size_t>(prob.dim(2)) * prob.dim(3);
  if (labels.size() != N * P || valid.size() != N * P) throw DimensionError("cross_entropy_prob: label shape");
  const T floor = T(1e-30);
  T count = 0, acc = 0;
  for (int n = 0; n < N; ++n)
    for (std::size_t i = 0; i < P; ++i) {
      const std::size_t li = static_cast<std::size_t>(n) * P + i;
      if (valid[li] == T(0)) continue;
      const int l = labels[li];
      if (l < 0 || l >= C) throw DimensionError("cross_entropy_prob: label out of range");
      acc -= std::log(std::max(prob.value()[(static_cast<std::size_t>(n) * C + l) * P + i], floor));
      count += 1;
    }
  if (count == 0) throw UndefinedLossError("cross_entropy_prob: empty validity mask");
  auto* pp = prob.node();
  return make_result<T>(Tensor<T>(Shape{1}, acc / count), {prob},
                        [pp, labels, valid, N, C, P, count, floor](Node<T>& o) {
                          auto& g = pp->grad_ref();
                          const T s = o.grad[0] / count;
                          for (int n = 0; n < N; ++n)
                            for (std::size_t i = 0; i < P; ++i) {
                              const std::size_t li = static_cast<std::size_t>(n) * P + i;
                              if (valid[li] == T(0)) continue;
                              const std::size_t k = (static_cast<std::size_t>(n) * C + labels[li]) * P + i;
                              const T p = pp->value[k];
                              if (p > floor) g[k] -= s / p;
                            }
                        });
}

// Mean absolute error over valid pixels; pred/target [N,1,H,W], valid [N,H,W].
template <typename T>
Var<T> masked_l1(const Var<T>& pred, const Tensor<T>& target, const Tensor<T>& valid) {
  pred.value().require_same_shape(target, "masked_l1");
  if (valid.size() != pred.value().size()) throw DimensionError("masked_l1: mask shape");
  T count = 0, acc = 0;
  for (std::size_t i = 0; i < target.size(); ++i)
    if (valid[i] != T(0)) {
      acc += std::abs(pred.value()[i] - target[i]);
      count += 1;
    }
  if (count == 0) throw UndefinedLossError("masked_l1: empty validity mask");
  auto* pp = pred.node();
  return make_result<T>(Tensor<T>(Shape{1}, acc / count), {pred}, [pp, target, valid, count](Node<T>& o) {
    auto& g = pp->grad_ref();
    const T s = o.grad[0] / count;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (valid[i] == T(0)) continue;
      const T d = pp->value[i] - target[i];
      if (d > 0) g[i] += s;
      else if (d < 0) g[i] -= s;
    }
  });
}

// Mean of (1 - <pred, target>) over valid pixels; pred/target [N,3,H,W].
template <typename T>
Var<T> masked_cosine(const Var<T>& pred, const Tensor<T>& target, const Tensor<T>& valid) {
  pred.value().require_same_shape(target, "masked_cosine");
  const int N = pred.dim(0), C = pred.dim(1);
  const std::size_t P = static_cast<std::size_t>(pred.dim(2)) * pred.dim(3);
  if (valid.size() != N * P) throw DimensionError("masked_cosine: mask shape");
  T count = 0, acc = 0;
  for (int n = 0; n < N; ++n)
    for (std::size_t i = 0; i < P; ++i) {
      if (valid[static_cast<std::size_t>(n) * P + i] == T(0)) continue;
      T dot = 0;
      for (int c = 0; c < C; ++c) {
        const std::size_t k = (static_cast<std::size_t>(n) * C + c) * P + i;
        dot += pred.value()[k] * target[k];
      }
      acc += T(1) - dot;
      count += 1;
    }
  if (count == 0) throw UndefinedLossError("masked_cosine: empty validity mask");
  auto* pp = pred.node();
  return make_result<T>(Tensor<T>(Shape{1}, acc / count), {pred}, [pp, target, valid, N, C, P, count](Node<T>& o) {
    auto& g = pp->grad_ref();
    const T s = o.grad[0] / count;
    for (int n = 0; n < N; ++n)
      for (std::size_t i = 0; i < P; ++i) {
        if (valid[static_cast<std::size_t>(n) * P + i] == T(0)) continue;
        for (int c = 0; c < C; ++c) {
          const std::size_t k = (static_cast<std::size_t>(n) * C + c) * P + i;
          g[k] -= s * target[k];
        }
      }
  });
}

}  // namespace dejavu::ag
