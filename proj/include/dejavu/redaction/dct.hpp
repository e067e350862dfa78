#pragma once

#include <Eigen/Core>

#include <cmath>
#include <numbers>

#include "dejavu/autograd/conv.hpp"
#include "dejavu/core/image.hpp"

namespace dejavu {

// Type-II orthonormal DCT coefficients, C x H x W.
template <typename T>
struct DctCoefficients {
  Tensor<T> data;
};

// Row k holds the k-th orthonormal DCT-II basis vector of length n:
// D[k][i] = a_k cos(pi (2i + 1) k / 2n), a_0 = sqrt(1/n), a_k = sqrt(2/n).
template <typename T>
ag::RowMat<T> dct_matrix(int n) {
  ag::RowMat<T> d(n, n);
  const double a0 = std::sqrt(1.0 / n), ak = std::sqrt(2.0 / n);
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      d(k, i) = static_cast<T>((k == 0 ? a0 : ak) * std::cos(std::numbers::pi * (2 * i + 1) * k / (2.0 * n)));
  return d;
}

namespace detail {

template <typename T>
Tensor<T> separable_transform(const Tensor<T>& in, bool inverse) {
  if (in.rank() != 3) throw DimensionError("dct: expected C x H x W");
  const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
  const auto dh = dct_matrix<T>(H);
  const auto dw = dct_matrix<T>(W);
  Tensor<T> out(in.shape());
  for (int c = 0; c < C; ++c) {
    ag::ConstMapMat<T> X(in.data() + static_cast<std::size_t>(c) * H * W, H, W);
    ag::MapMat<T> Y(out.data() + static_cast<std::size_t>(c) * H * W, H, W);
    if (inverse)
      Y.noalias() = dh.transpose() * X * dw;
    else
      Y.noalias() = dh * X * dw.transpose();
  }
  return out;
}

}  // namespace detail

// Transform along H, then W, for every channel.
template <typename T>
DctCoefficients<T> dct2(const ImageTensor<T>& img) {
  return {detail::separable_transform(img.data, false)};
}

template <typename T>
ImageTensor<T> idct2(const DctCoefficients<T>& coef) {
  return ImageTensor<T>(detail::separable_transform(coef.data, true));
}

}  // namespace dejavu
