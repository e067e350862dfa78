#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include "dejavu/core/image.hpp"
#include "dejavu/nn/module.hpp"

namespace dejavu::losses {

using ag::Var;

struct LossWeights {
  double gamma = 0.1;   // regeneration blend
  double gamma1 = 1.0;  // perceptual term
  double gamma2 = 1.0;  // pixel MSE term
  double gamma_text = 0.05;
  double gamma_cyc = 0.05;
  bool use_text = false;
  bool use_cyclic = false;

  double effective_text() const { return use_text ? gamma_text : 0.0; }
  double effective_cyc() const { return use_cyclic ? gamma_cyc : 0.0; }
  // True when any term depends on the regenerated image.
  bool regeneration_active() const { return gamma != 0.0 || effective_text() != 0.0 || effective_cyc() != 0.0; }

  void validate() const {
    for (double v : {gamma, gamma1, gamma2, gamma_text, gamma_cyc})
      if (!std::isfinite(v) || v < 0.0) throw ConfigError("loss weights must be finite and non-negative");
  }
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

template <typename T>
Var<T> mse_loss(const Var<T>& a, const Var<T>& b) {
  a.value().require_same_shape(b.value(), "mse_loss");
  return ag::mean_all(ag::square(ag::sub(a, b)));
}

template <typename T>
T mse_loss(const Tensor<T>& a, const Tensor<T>& b) {
  return mse_loss(ag::constant(a), ag::constant(b)).item();
}

// Frozen three-stage strided feature network with LPIPS-style distances.
// Weights are drawn once from a fixed seed and never trained.
template <typename T>
class PerceptualExtractor {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x5EEDF00Dull;

  explicit PerceptualExtractor(std::uint64_t seed = kDefaultSeed) {
    SeededRng rng(seed);
    // Maps [0,1] input to [-1,1], then applies the per-channel shift/scale
    // used by LPIPS.
    constexpr std::array<double, 3> shift{-0.030, -0.088, -0.188};
    constexpr std::array<double, 3> scl{0.458, 0.448, 0.450};
    Tensor<T> w(Shape{3, 3, 1, 1}), b(Shape{3});
    for (int c = 0; c < 3; ++c) {
      w.at(c, c, 0, 0) = static_cast<T>(2.0 / scl[c]);
      b[c] = static_cast<T>((-1.0 - shift[c]) / scl[c]);
    }
    input_scale_.weight = ag::leaf(std::move(w), false);
    input_scale_.bias = ag::leaf(std::move(b), false);
    stages_.emplace_back(3, 8, 3, 2, 1, rng, false);
    stages_.emplace_back(8, 16, 3, 2, 1, rng, false);
    stages_.emplace_back(16, 32, 3, 2, 1, rng, false);
  }

  std::vector<Var<T>> features(const Var<T>& x) const {
    std::vector<Var<T>> taps;
    Var<T> h = input_scale_(x);
    for (const auto& s : stages_) {
      h = ag::relu(s(h));
      taps.push_back(h);
    }
    return taps;
  }

  nn::ParamSet<T> parameters() const {
    nn::ParamSet<T> ps;
    input_scale_.collect(ps, "perceptual.scale");
    for (std::size_t i = 0; i < stages_.size(); ++i) stages_[i].collect(ps, "perceptual.stage" + std::to_string(i));
    return ps;
  }
  std::size_t tap_count() const { return stages_.size(); }

 private:
  nn::Conv2d<T> input_scale_;
  std::vector<nn::Conv2d<T>> stages_;
};

// Sum over taps of the spatially averaged squared distance between
// channel-unit-normalized features.
template <typename T>
Var<T> perceptual_loss(const Var<T>& gen, const Var<T>& ref, const PerceptualExtractor<T>& ext) {
  gen.value().require_same_shape(ref.value(), "perceptual_loss");
  const auto fg = ext.features(gen);
  const auto fr = ext.features(ref);
  std::vector<Var<T>> terms;
  std::vector<T> w;
  for (std::size_t l = 0; l < fg.size(); ++l) {
    auto d = ag::sub(ag::l2_normalize_channels(fg[l]), ag::l2_normalize_channels(fr[l]));
    // mean over N,C,H,W times C == mean over N,H,W of the channel sum
    terms.push_back(ag::mean_all(ag::square(d)));
    w.push_back(static_cast<T>(fg[l].dim(1)));
  }
  return ag::weighted_sum(terms, w);
}

// gamma1 * perceptual + gamma2 * mse. Zero-weighted terms are not evaluated.
template <typename T>
Var<T> regen_loss(const Var<T>& gen, const Var<T>& ref, const LossWeights& w, const PerceptualExtractor<T>& ext) {
  std::vector<Var<T>> terms;
  std::vector<T> k;
  if (w.gamma1 != 0.0) {
    terms.push_back(perceptual_loss(gen, ref, ext));
    k.push_back(static_cast<T>(w.gamma1));
  }
  if (w.gamma2 != 0.0) {
    terms.push_back(mse_loss(gen, ref));
    k.push_back(static_cast<T>(w.gamma2));
  }
  if (terms.empty()) return ag::constant(Tensor<T>(Shape{1}));
  if (terms.size() == 1 && k[0] == T(1)) return terms[0];
  return ag::weighted_sum(terms, k);
}

// l_base + gamma * l_regen + gamma_text * l_text + gamma_cyc * l_cyc.
// Undefined handles count as absent terms.
template <typename T>
Var<T> total_loss(const Var<T>& l_base, const Var<T>& l_regen, const Var<T>& l_text, const Var<T>& l_cyc,
                  const LossWeights& w) {
  std::vector<Var<T>> terms{l_base};
  std::vector<T> k{T(1)};
  auto push = [&](const Var<T>& v, double weight) {
    if (v.defined()) {
      terms.push_back(v);
      k.push_back(static_cast<T>(weight));
    }
  };
  push(l_regen, w.gamma);
  push(l_text, w.effective_text());
  push(l_cyc, w.effective_cyc());
  for (const auto& t : terms)
    if (!t.value().all_finite()) throw NonFiniteLossError("non-finite loss term");
  auto total = ag::weighted_sum(terms, k);
  if (!total.value().all_finite()) throw NonFiniteLossError("non-finite total loss");
  return total;
}

inline double total_loss(double l_base, double l_regen, double l_text, double l_cyc, const LossWeights& w) {
  for (double v : {l_base, l_regen, l_text, l_cyc})
    if (!std::isfinite(v)) throw NonFiniteLossError("non-finite loss term");
  return l_base + w.gamma * l_regen + w.effective_text() * l_text + w.effective_cyc() * l_cyc;
}

// Frozen image embedder standing in for a pretrained vision-language encoder.
template <typename T>
class TextEmbedder {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0xC11Bull;

  explicit TextEmbedder(int dim = 64, std::uint64_t seed = kDefaultSeed) {
    SeededRng rng(seed);
    conv1_ = nn::Conv2d<T>(3, 16, 4, 4, 0, rng, false);
    conv2_ = nn::Conv2d<T>(16, 32, 3, 2, 1, rng, false);
    proj_ = nn::Linear<T>(32, dim, rng, false);
  }

  // [N,3,H,W] -> [N,1,D]
  Var<T> embed(const Var<T>& x) const {
    return proj_(ag::global_avg_pool_token(ag::relu(conv2_(ag::relu(conv1_(x))))));
  }
  int dim() const { return proj_.out_features(); }

  nn::ParamSet<T> parameters() const {
    nn::ParamSet<T> ps;
    conv1_.collect(ps, "text.conv1");
    conv2_.collect(ps, "text.conv2");
    proj_.collect(ps, "text.proj");
    return ps;
  }

 private:
  nn::Conv2d<T> conv1_, conv2_;
  nn::Linear<T> proj_;
};

// (1/D) * ||embed(gen) - embed(img)||^2, averaged over the batch.
template <typename T>
Var<T> text_supervision_loss(const Var<T>& img, const Var<T>& gen, const TextEmbedder<T>& embedder) {
  img.value().require_same_shape(gen.value(), "text_supervision_loss");
  return ag::mean_all(ag::square(ag::sub(embedder.embed(gen), embedder.embed(img))));
}

template <typename T>
using BaseNetFn = std::function<Var<T>(const Var<T>&)>;

// mse(basenet(gen), cond) with the original predictions treated as a fixed
// target.
template <typename T>
Var<T> cyclic_consistency_loss(const Var<T>& cond, const Var<T>& gen, const BaseNetFn<T>& basenet) {
  return mse_loss(basenet(gen), ag::detach(cond));
}

}  // namespace dejavu::losses
