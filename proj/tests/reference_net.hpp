#pragma once

// Plain-loop forward pass of the base network, written independently of the
// autograd kernels. Used as an oracle in tests.

#include <cmath>
#include <string>
#include <vector>

#include "dejavu/tasks/basenet.hpp"

namespace dejavu::testing {

using Arr = Tensor<double>;

inline const Arr& param(const nn::ParamSet<double>& ps, const std::string& name) {
  const auto* p = ps.find(name);
  if (!p) throw std::runtime_error("missing parameter " + name);
  return p->var.value();
}

inline Arr ref_conv(const Arr& x, const Arr& w, const Arr& b, int stride, int pad) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = w.dim(0), k = w.dim(2);
  const int OH = (H + 2 * pad - k) / stride + 1, OW = (W + 2 * pad - k) / stride + 1;
  Arr out(Shape{N, O, OH, OW});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o)
      for (int y = 0; y < OH; ++y)
        for (int xx = 0; xx < OW; ++xx) {
          double s = b[o];
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = y * stride + ky - pad, ix = xx * stride + kx - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                s += w.at(o, c, ky, kx) * x.at(n, c, iy, ix);
              }
          out.at(n, o, y, xx) = s;
        }
  return out;
}

inline Arr ref_conv_transpose(const Arr& x, const Arr& w, const Arr& b, int stride, int pad) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = w.dim(1), k = w.dim(2);
  const int OH = (H - 1) * stride - 2 * pad + k, OW = (W - 1) * stride - 2 * pad + k;
  Arr out(Shape{N, O, OH, OW});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o)
      for (int y = 0; y < OH; ++y)
        for (int xx = 0; xx < OW; ++xx) out.at(n, o, y, xx) = b[o];
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
          for (int o = 0; o < O; ++o)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int oy = y * stride + ky - pad, ox = xx * stride + kx - pad;
                if (oy < 0 || oy >= OH || ox < 0 || ox >= OW) continue;
                out.at(n, o, oy, ox) += x.at(n, c, y, xx) * w.at(c, o, ky, kx);
              }
  return out;
}

// Batch statistics with the biased variance, eps 1e-5.
inline Arr ref_bn_train(const Arr& x, const Arr& g, const Arr& b) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Arr out(x.shape());
  for (int c = 0; c < C; ++c) {
    double m = 0, v = 0;
    const double cnt = double(N) * H * W;
    for (int n = 0; n < N; ++n)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) m += x.at(n, c, y, xx);
    m /= cnt;
    for (int n = 0; n < N; ++n)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) v += (x.at(n, c, y, xx) - m) * (x.at(n, c, y, xx) - m);
    v /= cnt;
    for (int n = 0; n < N; ++n)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
          out.at(n, c, y, xx) = g[c] * (x.at(n, c, y, xx) - m) / std::sqrt(v + 1e-5) + b[c];
  }
  return out;
}

inline Arr ref_relu(Arr x) {
  for (auto& v : x.vec()) v = v > 0 ? v : 0;
  return x;
}

inline Arr ref_cbr(const nn::ParamSet<double>& ps, const std::string& pre, const Arr& x, int stride) {
  return ref_relu(ref_bn_train(ref_conv(x, param(ps, pre + ".conv.weight"), param(ps, pre + ".conv.bias"), stride, 1),
                               param(ps, pre + ".bn.gamma"), param(ps, pre + ".bn.beta")));
}

inline Arr ref_concat(const Arr& a, const Arr& b) {
  const int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
  Arr out(Shape{N, Ca + Cb, H, W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < Ca + Cb; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) out.at(n, c, y, x) = c < Ca ? a.at(n, c, y, x) : b.at(n, c - Ca, y, x);
  return out;
}

inline Arr ref_softmax(const Arr& x) {
  Arr out(x.shape());
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  for (int n = 0; n < N; ++n)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) {
        double z = 0;
        for (int c = 0; c < C; ++c) z += std::exp(x.at(n, c, y, xx));
        for (int c = 0; c < C; ++c) out.at(n, c, y, xx) = std::exp(x.at(n, c, y, xx)) / z;
      }
  return out;
}

// Training-mode forward of a single-task segmentation base network.
inline Arr ref_basenet_segmentation(const tasks::BaseNet<double>& net, const Arr& img) {
  const auto ps = net.parameters();
  const int levels = net.config().depth_levels;
  std::vector<Arr> skips;
  Arr h = img;
  for (int l = 0; l < levels; ++l) {
    h = ref_cbr(ps, "basenet.enc" + std::to_string(l), h, l == 0 ? 1 : 2);
    skips.push_back(h);
  }
  for (int l = levels - 1; l >= 1; --l) {
    const std::string up = "basenet.up" + std::to_string(l - 1);
    Arr u = ref_conv_transpose(h, param(ps, up + ".weight"), param(ps, up + ".bias"), 2, 0);
    h = ref_cbr(ps, "basenet.fuse" + std::to_string(l - 1), ref_concat(u, skips[static_cast<std::size_t>(l - 1)]), 1);
  }
  return ref_softmax(ref_conv(h, param(ps, "basenet.head.segmentation.weight"),
                              param(ps, "basenet.head.segmentation.bias"), 1, 0));
}

inline double ref_mse(const Arr& a, const Arr& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace dejavu::testing
