#pragma once

#include <Eigen/Core>

#include <cmath>
#include <vector>

#include "dejavu/autograd/ops.hpp"

namespace dejavu::ag {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  int channels, height, width;  // input plane
  int kernel, stride, pad;
  int out_h() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (width + 2 * pad - kernel) / stride + 1; }
  int rows() const { return channels * kernel * kernel; }
  int cols() const { return out_h() * out_w(); }
};

namespace detail {

// col[(c*k + i)*k + j][oy*OW + ox] = x[c][oy*s - p + i][ox*s - p + j]
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const int OH = g.out_h(), OW = g.out_w(), k = g.kernel;
  for (int c = 0; c < g.channels; ++c)
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) {
        T* dst = col + static_cast<std::size_t>((c * k + i) * k + j) * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
          const int y = oy * g.stride - g.pad + i;
          if (y < 0 || y >= g.height) {
            std::fill_n(dst + oy * OW, OW, T(0));
            continue;
          }
          const T* row = x + (static_cast<std::size_t>(c) * g.height + y) * g.width;
          for (int ox = 0; ox < OW; ++ox) {
            const int xx = ox * g.stride - g.pad + j;
            dst[oy * OW + ox] = (xx >= 0 && xx < g.width) ? row[xx] : T(0);
          }
        }
      }
}

// Adjoint of im2col: scatters-adds columns back onto the plane.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* x) {
  const int OH = g.out_h(), OW = g.out_w(), k = g.kernel;
  for (int c = 0; c < g.channels; ++c)
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) {
        const T* src = col + static_cast<std::size_t>((c * k + i) * k + j) * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
          const int y = oy * g.stride - g.pad + i;
          if (y < 0 || y >= g.height) continue;
          T* row = x + (static_cast<std::size_t>(c) * g.height + y) * g.width;
          for (int ox = 0; ox < OW; ++ox) {
            const int xx = ox * g.stride - g.pad + j;
            if (xx >= 0 && xx < g.width) row[xx] += src[oy * OW + ox];
          }
        }
      }
}

}  // namespace detail

// 2D cross-correlation. x [N,Cin,H,W], weight [Cout,Cin,k,k], bias [Cout].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  detail::require_rank4(x.shape(), "conv2d");
  detail::require_rank4(weight.shape(), "conv2d weight");
  const int N = x.dim(0), Cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != x.dim(1))
    throw DimensionError("conv2d: weight expects " + std::to_string(weight.dim(1)) + " input channels, got " +
                         std::to_string(x.dim(1)));
  const ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), k, stride, pad};
  if (g.out_h() <= 0 || g.out_w() <= 0) throw DimensionError("conv2d: empty output");
  const int K = g.rows(), P = g.cols();
  Tensor<T> out(Shape{N, Cout, g.out_h(), g.out_w()});
  std::vector<T> col(static_cast<std::size_t>(K) * P);
  ConstMapMat<T> W(weight.value().data(), Cout, K);
  const std::size_t in_plane = static_cast<std::size_t>(g.channels) * g.height * g.width;
  for (int n = 0; n < N; ++n) {
    detail::im2col(x.value().data() + n * in_plane, g, col.data());
    MapMat<T> O(out.data() + static_cast<std::size_t>(n) * Cout * P, Cout, P);
    O.noalias() = W * ConstMapMat<T>(col.data(), K, P);
    for (int c = 0; c < Cout; ++c) O.row(c).array() += bias.value()[c];
  }
  auto *px = x.node(), *pw = weight.node(), *pb = bias.node();
  return make_result<T>(std::move(out), {x, weight, bias}, [px, pw, pb, g, N, Cout, K, P, in_plane](Node<T>& o) {
    std::vector<T> col(static_cast<std::size_t>(K) * P);
    std::vector<T> dcol(static_cast<std::size_t>(K) * P);
    ConstMapMat<T> W(pw->value.data(), Cout, K);
    for (int n = 0; n < N; ++n) {
      ConstMapMat<T> dO(o.grad.data() + static_cast<std::size_t>(n) * Cout * P, Cout, P);
      if (pb->requires_grad) {
        auto& gb = pb->grad_ref();
        for (int c = 0; c < Cout; ++c) gb[c] += dO.row(c).sum();
      }
      if (pw->requires_grad) {
        detail::im2col(px->value.data() + n * in_plane, g, col.data());
        MapMat<T> gW(pw->grad_ref().data(), Cout, K);
        gW.noalias() += dO * ConstMapMat<T>(col.data(), K, P).transpose();
      }
      if (px->requires_grad) {
        MapMat<T>(dcol.data(), K, P).noalias() = W.transpose() * dO;
        detail::col2im(dcol.data(), g, px->grad_ref().data() + n * in_plane);
      }
    }
  });
}

// Transposed convolution, the adjoint of conv2d in x.
// x [N,Cin,H,W], weight [Cin,Cout,k,k], bias [Cout]; output (H-1)*s - 2p + k.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  detail::require_rank4(x.shape(), "conv_transpose2d");
  detail::require_rank4(weight.shape(), "conv_transpose2d weight");
  const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), Wd = x.dim(3);
  const int Cout = weight.dim(1), k = weight.dim(2);
  if (weight.dim(0) != Cin) throw DimensionError("conv_transpose2d: input channel mismatch");
  const int OH = (H - 1) * stride - 2 * pad + k, OW = (Wd - 1) * stride - 2 * pad + k;
  // Geometry of the forward conv that maps the output plane back to x.
  const ConvGeometry g{Cout, OH, OW, k, stride, pad};
  if (g.out_h() != H || g.out_w() != Wd) throw DimensionError("conv_transpose2d: inconsistent geometry");
  const int K = g.rows(), P = H * Wd;
  Tensor<T> out(Shape{N, Cout, OH, OW});
  std::vector<T> col(static_cast<std::size_t>(K) * P);
  ConstMapMat<T> Wm(weight.value().data(), Cin, K);
  const std::size_t out_plane = static_cast<std::size_t>(Cout) * OH * OW;
  for (int n = 0; n < N; ++n) {
    ConstMapMat<T> X(x.value().data() + static_cast<std::size_t>(n) * Cin * P, Cin, P);
    MapMat<T>(col.data(), K, P).noalias() = Wm.transpose() * X;
    T* dst = out.data() + n * out_plane;
    detail::col2im(col.data(), g, dst);
    for (int c = 0; c < Cout; ++c) {
      const T b = bias.value()[c];
      for (int i = 0; i < OH * OW; ++i) dst[static_cast<std::size_t>(c) * OH * OW + i] += b;
    }
  }
  auto *px = x.node(), *pw = weight.node(), *pb = bias.node();
  return make_result<T>(std::move(out), {x, weight, bias}, [px, pw, pb, g, N, Cin, Cout, K, P, out_plane](Node<T>& o) {
    std::vector<T> col(static_cast<std::size_t>(K) * P);
    ConstMapMat<T> Wm(pw->value.data(), Cin, K);
    const int OHW = g.height * g.width;
    for (int n = 0; n < N; ++n) {
      const T* dO = o.grad.data() + n * out_plane;
      if (pb->requires_grad) {
        auto& gb = pb->grad_ref();
        for (int c = 0; c < Cout; ++c)
          for (int i = 0; i < OHW; ++i) gb[c] += dO[static_cast<std::size_t>(c) * OHW + i];
      }
      if (!px->requires_grad && !pw->requires_grad) continue;
      detail::im2col(dO, g, col.data());
      ConstMapMat<T> C(col.data(), K, P);
      if (px->requires_grad) {
        MapMat<T> gX(px->grad_ref().data() + static_cast<std::size_t>(n) * Cin * P, Cin, P);
        gX.noalias() += Wm * C;
      }
      if (pw->requires_grad) {
        ConstMapMat<T> X(px->value.data() + static_cast<std::size_t>(n) * Cin * P, Cin, P);
        MapMat<T> gW(pw->grad_ref().data(), Cin, K);
        gW.noalias() += X * C.transpose();
      }
    }
  });
}

// Running statistics live outside the graph; they are buffers, not parameters.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
};

// Per-channel normalization of [N,C,H,W]. Training mode normalizes with batch
// statistics and updates the running estimates; evaluation mode uses them.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormState<T>& state, bool training) {
  detail::require_rank4(x.shape(), "batch_norm");
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t P = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const std::size_t M = N * P;
  std::vector<T> mean(C), inv_std(C);
  const T* in = x.value().data();
  for (int c = 0; c < C; ++c) {
    if (training) {
      T s = 0;
      for (int n = 0; n < N; ++n)
        for (std::size_t i = 0; i < P; ++i) s += in[(static_cast<std::size_t>(n) * C + c) * P + i];
      const T mu = s / static_cast<T>(M);
      T v = 0;
      for (int n = 0; n < N; ++n)
        for (std::size_t i = 0; i < P; ++i) {
          const T d = in[(static_cast<std::size_t>(n) * C + c) * P + i] - mu;
          v += d * d;
        }
      const T var = v / static_cast<T>(M);
      mean[c] = mu;
      inv_std[c] = T(1) / std::sqrt(var + state.eps);
      const T unbiased = M > 1 ? v / static_cast<T>(M - 1) : var;
      state.running_mean[c] = (T(1) - state.momentum) * state.running_mean[c] + state.momentum * mu;
      state.running_var[c] = (T(1) - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    } else {
      mean[c] = state.running_mean[c];
      inv_std[c] = T(1) / std::sqrt(state.running_var[c] + state.eps);
    }
  }
  Tensor<T> xhat(x.shape());
  Tensor<T> out(x.shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * P;
      const T ga = gamma.value()[c], be = beta.value()[c];
      for (std::size_t i = 0; i < P; ++i) {
        const T h = (in[off + i] - mean[c]) * inv_std[c];
        xhat[off + i] = h;
        out[off + i] = ga * h + be;
      }
    }
  auto *px = x.node(), *pg = gamma.node(), *pb = beta.node();
  return make_result<T>(
      std::move(out), {x, gamma, beta},
      [px, pg, pb, N, C, P, M, training, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node<T>& o) {
        for (int c = 0; c < C; ++c) {
          T sum_dy = 0, sum_dy_xhat = 0;
          for (int n = 0; n < N; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * P;
            for (std::size_t i = 0; i < P; ++i) {
              sum_dy += o.grad[off + i];
              sum_dy_xhat += o.grad[off + i] * xhat[off + i];
            }
          }
          if (pg->requires_grad) pg->grad_ref()[c] += sum_dy_xhat;
          if (pb->requires_grad) pb->grad_ref()[c] += sum_dy;
          if (!px->requires_grad) continue;
          auto& g = px->grad_ref();
          const T ga = pg->value[c];
          const T scale = ga * inv_std[c];
          const T invM = T(1) / static_cast<T>(M);
          for (int n = 0; n < N; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * P;
            for (std::size_t i = 0; i < P; ++i) {
              if (training)
                g[off + i] += scale * (o.grad[off + i] - invM * sum_dy - xhat[off + i] * invM * sum_dy_xhat);
              else
                g[off + i] += scale * o.grad[off + i];
            }
          }
        }
      });
}

}  // namespace dejavu::ag
