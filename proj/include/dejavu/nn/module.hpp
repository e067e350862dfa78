#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "dejavu/autograd/attention.hpp"
#include "dejavu/autograd/conv.hpp"
#include "dejavu/core/rng.hpp"

namespace dejavu::nn {

using ag::Var;

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  std::shared_ptr<ag::BatchNormState<T>> state;
};

// Flat inventory of a model's trainable tensors and normalization buffers.
// Entries share storage with the modules, so updates are visible to both.
template <typename T>
class ParamSet {
 public:
  void add(std::string name, const Var<T>& v) { params_.push_back({std::move(name), v}); }
  void add_buffer(std::string name, std::shared_ptr<ag::BatchNormState<T>> s) {
    buffers_.push_back({std::move(name), std::move(s)});
  }
  void append(const ParamSet& other) {
    params_.insert(params_.end(), other.params_.begin(), other.params_.end());
    buffers_.insert(buffers_.end(), other.buffers_.begin(), other.buffers_.end());
  }

  const std::vector<NamedParam<T>>& params() const { return params_; }
  std::vector<NamedParam<T>>& params() { return params_; }
  const std::vector<NamedBuffer<T>>& buffers() const { return buffers_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var.value().size();
    return n;
  }
  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }
  void set_requires_grad(bool on) {
    for (auto& p : params_) p.var.node()->requires_grad = on;
  }
  const NamedParam<T>* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  // FNV-1a over the raw parameter bytes.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](const void* data, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(data);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ull;
      }
    };
    for (const auto& p : params_) mix(p.var.value().data(), p.var.value().size() * sizeof(T));
    return h;
  }

 private:
  std::vector<NamedParam<T>> params_;
  std::vector<NamedBuffer<T>> buffers_;
};

template <typename T>
Tensor<T> uniform_tensor(Shape s, T bound, SeededRng& rng) {
  Tensor<T> t(std::move(s));
  for (auto& v : t.vec()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
struct Conv2d {
  Var<T> weight, bias;
  int stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(int cin, int cout, int k, int stride_, int pad_, SeededRng& rng, bool trainable = true)
      : stride(stride_), pad(pad_) {
    const T bound = std::sqrt(T(6) / static_cast<T>(cin * k * k));
    weight = ag::leaf(uniform_tensor<T>({cout, cin, k, k}, bound, rng), trainable);
    bias = ag::leaf(Tensor<T>(Shape{cout}), trainable);
  }
  int in_channels() const { return weight.dim(1); }
  int out_channels() const { return weight.dim(0); }
  Var<T> operator()(const Var<T>& x) const { return ag::conv2d(x, weight, bias, stride, pad); }
  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    ps.add(prefix + ".weight", weight);
    ps.add(prefix + ".bias", bias);
  }
};

template <typename T>
struct ConvTranspose2d {
  Var<T> weight, bias;
  int stride = 1, pad = 0;

  ConvTranspose2d() = default;
  ConvTranspose2d(int cin, int cout, int k, int stride_, int pad_, SeededRng& rng) : stride(stride_), pad(pad_) {
    const int taps = std::max(1, (k / stride_) * (k / stride_));
    const T bound = std::sqrt(T(6) / static_cast<T>(cin * taps));
    weight = ag::leaf(uniform_tensor<T>({cin, cout, k, k}, bound, rng), true);
    bias = ag::leaf(Tensor<T>(Shape{cout}), true);
  }
  Var<T> operator()(const Var<T>& x) const { return ag::conv_transpose2d(x, weight, bias, stride, pad); }
  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    ps.add(prefix + ".weight", weight);
    ps.add(prefix + ".bias", bias);
  }
};

template <typename T>
struct BatchNorm2d {
  Var<T> gamma, beta;
  std::shared_ptr<ag::BatchNormState<T>> state;

  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels)
      : gamma(ag::leaf(Tensor<T>::ones({channels}), true)),
        beta(ag::leaf(Tensor<T>(Shape{channels}), true)),
        state(std::make_shared<ag::BatchNormState<T>>()) {
    state->running_mean = Tensor<T>(Shape{channels});
    state->running_var = Tensor<T>::ones({channels});
  }
  Var<T> operator()(const Var<T>& x, bool training) const { return ag::batch_norm(x, gamma, beta, *state, training); }
  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    ps.add(prefix + ".gamma", gamma);
    ps.add(prefix + ".beta", beta);
    ps.add_buffer(prefix + ".stats", state);
  }
};

template <typename T>
struct Linear {
  Var<T> weight, bias;

  Linear() = default;
  Linear(int in, int out, SeededRng& rng, bool trainable = true) {
    const T bound = std::sqrt(T(6) / static_cast<T>(in + out));
    weight = ag::leaf(uniform_tensor<T>({in, out}, bound, rng), trainable);
    bias = ag::leaf(Tensor<T>(Shape{out}), trainable);
  }
  int in_features() const { return weight.dim(0); }
  int out_features() const { return weight.dim(1); }
  Var<T> operator()(const Var<T>& x) const { return ag::linear(x, weight, bias); }
  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    ps.add(prefix + ".weight", weight);
    ps.add(prefix + ".bias", bias);
  }
};

// 3x3 Conv -> BatchNorm -> ReLU.
template <typename T>
struct ConvBnRelu {
  Conv2d<T> conv;
  BatchNorm2d<T> bn;

  ConvBnRelu() = default;
  ConvBnRelu(int cin, int cout, int stride, SeededRng& rng, int k = 3)
      : conv(cin, cout, k, stride, k / 2, rng), bn(cout) {}
  Var<T> operator()(const Var<T>& x, bool training) const { return ag::relu(bn(conv(x), training)); }
  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    conv.collect(ps, prefix + ".conv");
    bn.collect(ps, prefix + ".bn");
  }
};

}  // namespace dejavu::nn
