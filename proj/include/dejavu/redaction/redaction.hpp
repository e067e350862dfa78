#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "dejavu/core/image.hpp"
#include "dejavu/core/rng.hpp"
#include "dejavu/redaction/dct.hpp"

namespace dejavu {

enum class RedactionDomain { spatial, spectral };
enum class RedactionVariant { random, checkerboard, random_blocks, lowpass, highpass, bandstop };

inline std::string_view to_string(RedactionDomain d) { return d == RedactionDomain::spatial ? "spatial" : "spectral"; }

inline std::string_view to_string(RedactionVariant v) {
  switch (v) {
    case RedactionVariant::random: return "random";
    case RedactionVariant::checkerboard: return "checkerboard";
    case RedactionVariant::random_blocks: return "random_blocks";
    case RedactionVariant::lowpass: return "lowpass";
    case RedactionVariant::highpass: return "highpass";
    case RedactionVariant::bandstop: return "bandstop";
  }
  return "?";
}

inline RedactionDomain redaction_domain_from_string(std::string_view s) {
  if (s == "spatial") return RedactionDomain::spatial;
  if (s == "spectral") return RedactionDomain::spectral;
  throw InvalidSpecError("unknown redaction domain '" + std::string(s) + "'");
}

inline RedactionVariant redaction_variant_from_string(std::string_view s) {
  for (auto v : {RedactionVariant::random, RedactionVariant::checkerboard, RedactionVariant::random_blocks,
                 RedactionVariant::lowpass, RedactionVariant::highpass, RedactionVariant::bandstop})
    if (to_string(v) == s) return v;
  throw InvalidSpecError("unknown redaction variant '" + std::string(s) + "'");
}

inline bool is_spatial(RedactionVariant v) {
  return v == RedactionVariant::random || v == RedactionVariant::checkerboard || v == RedactionVariant::random_blocks;
}

// One redaction. Only the fields used by (domain, variant) may be set:
//   spatial random            -> t
//   spatial checkerboard      -> b
//   spatial random_blocks     -> b
//   spectral lowpass/highpass/bandstop -> band_lo, band_hi
// Lowpass keeps r <= band_hi, highpass keeps r >= band_lo.
struct RedactionSpec {
  RedactionDomain domain = RedactionDomain::spatial;
  RedactionVariant variant = RedactionVariant::random;
  std::optional<double> t;
  std::optional<int> b;
  std::optional<double> band_lo;
  std::optional<double> band_hi;
  std::uint64_t seed = 0;

  static RedactionSpec spatial_random(double t, std::uint64_t seed = 0) {
    return {RedactionDomain::spatial, RedactionVariant::random, t, std::nullopt, std::nullopt, std::nullopt, seed};
  }
  static RedactionSpec checkerboard(int b) {
    return {RedactionDomain::spatial, RedactionVariant::checkerboard, std::nullopt, b, std::nullopt, std::nullopt, 0};
  }
  static RedactionSpec random_blocks(int b, std::uint64_t seed = 0) {
    return {RedactionDomain::spatial, RedactionVariant::random_blocks, std::nullopt, b, std::nullopt, std::nullopt,
            seed};
  }
  static RedactionSpec spectral(RedactionVariant v, double lo, double hi) {
    return {RedactionDomain::spectral, v, std::nullopt, std::nullopt, lo, hi, 0};
  }

  // Structural checks that do not depend on the image size.
  void validate() const {
    const bool spatial_variant = is_spatial(variant);
    if ((domain == RedactionDomain::spatial) != spatial_variant)
      throw InvalidSpecError("variant '" + std::string(to_string(variant)) + "' does not belong to domain '" +
                             std::string(to_string(domain)) + "'");
    const bool wants_t = variant == RedactionVariant::random;
    const bool wants_b = variant == RedactionVariant::checkerboard || variant == RedactionVariant::random_blocks;
    const bool wants_band = !spatial_variant;
    if (t.has_value() != wants_t) throw InvalidSpecError(wants_t ? "missing drop probability t" : "t is not used by this variant");
    if (b.has_value() != wants_b) throw InvalidSpecError(wants_b ? "missing block size b" : "b is not used by this variant");
    if (band_lo.has_value() != wants_band || band_hi.has_value() != wants_band)
      throw InvalidSpecError(wants_band ? "missing band (lo, hi)" : "band is not used by spatial variants");
    if (wants_t && !(*t >= 0.0 && *t <= 1.0)) throw InvalidSpecError("t must lie in [0, 1]");
    if (wants_b && *b < 1) throw InvalidSpecError("b must be a positive integer");
    if (wants_band && !(*band_lo >= 0.0 && *band_lo < *band_hi && *band_hi <= 1.0))
      throw InvalidSpecError("band must satisfy 0 <= lo < hi <= 1");
  }
  void validate_for(int h, int w) const {
    validate();
    if (b && *b > std::min(h, w)) throw InvalidSpecError("block size exceeds image size");
  }

  friend bool operator==(const RedactionSpec&, const RedactionSpec&) = default;
};

// Binary H x W mask; 1 keeps, 0 removes.
struct SpatialMask {
  Tensor<std::uint8_t> data;
  int height() const { return data.dim(0); }
  int width() const { return data.dim(1); }
  std::uint8_t operator()(int y, int x) const { return data[static_cast<std::size_t>(y) * width() + x]; }
  std::size_t zeros() const {
    std::size_t z = 0;
    for (auto v : data.vec()) z += v == 0;
    return z;
  }
};

// b x b checkerboard whose top-left block (after the origin shift) is kept.
inline SpatialMask checkerboard_mask(int h, int w, int b, int shift_y = 0, int shift_x = 0) {
  SpatialMask m{Tensor<std::uint8_t>(Shape{h, w})};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      m.data[static_cast<std::size_t>(y) * w + x] = ((y + shift_y) / b + (x + shift_x) / b) % 2 == 0 ? 1 : 0;
  return m;
}

inline SpatialMask make_spatial_mask(int h, int w, const RedactionSpec& spec, SeededRng& rng) {
  if (spec.domain != RedactionDomain::spatial) throw InvalidSpecError("make_spatial_mask needs a spatial spec");
  spec.validate_for(h, w);
  switch (spec.variant) {
    case RedactionVariant::random: {
      SpatialMask m{Tensor<std::uint8_t>(Shape{h, w})};
      for (auto& v : m.data.vec()) v = rng.uniform() < *spec.t ? 0 : 1;
      return m;
    }
    case RedactionVariant::checkerboard: return checkerboard_mask(h, w, *spec.b);
    case RedactionVariant::random_blocks: {
      const auto period = static_cast<std::uint64_t>(2 * *spec.b);
      const int sy = static_cast<int>(rng.uniform_int(period));
      const int sx = static_cast<int>(rng.uniform_int(period));
      return checkerboard_mask(h, w, *spec.b, sy, sx);
    }
    default: break;
  }
  throw InvalidSpecError("unreachable spatial variant");
}

template <typename T>
ImageTensor<T> apply_spatial_mask(const ImageTensor<T>& img, const SpatialMask& mask) {
  if (mask.height() != img.height() || mask.width() != img.width())
    throw DimensionError("apply_spatial_mask: mask " + shape_str(mask.data.shape()) + " vs image " +
                         shape_str(img.shape()));
  ImageTensor<T> out = img;
  const std::size_t P = static_cast<std::size_t>(img.height()) * img.width();
  for (int c = 0; c < img.channels(); ++c)
    for (std::size_t i = 0; i < P; ++i)
      if (mask.data[i] == 0) out.data[c * P + i] = T(0);
  return out;
}

// Normalized radial frequency of DCT index (u, v) on an h x w grid.
inline double radial_index(int u, int v, int h, int w) {
  const double denom = std::sqrt(double(h - 1) * (h - 1) + double(w - 1) * (w - 1));
  if (denom == 0.0) return 0.0;
  return std::sqrt(double(u) * u + double(v) * v) / denom;
}

inline SpatialMask make_spectral_mask(int h, int w, const RedactionSpec& spec) {
  if (spec.domain != RedactionDomain::spectral) throw InvalidSpecError("make_spectral_mask needs a spectral spec");
  spec.validate();
  const double lo = *spec.band_lo, hi = *spec.band_hi;
  SpatialMask m{Tensor<std::uint8_t>(Shape{h, w})};
  for (int u = 0; u < h; ++u)
    for (int v = 0; v < w; ++v) {
      const double r = radial_index(u, v, h, w);
      bool keep = true;
      switch (spec.variant) {
        case RedactionVariant::lowpass: keep = r <= hi; break;
        case RedactionVariant::highpass: keep = r >= lo; break;
        case RedactionVariant::bandstop: keep = !(r >= lo && r <= hi); break;
        default: throw InvalidSpecError("unreachable spectral variant");
      }
      m.data[static_cast<std::size_t>(u) * w + v] = keep ? 1 : 0;
    }
  return m;
}

// Spectral filter: idct2(mask * dct2(img)); the result is not clamped.
template <typename T>
ImageTensor<T> apply_spectral_mask(const ImageTensor<T>& img, const SpatialMask& mask) {
  if (mask.height() != img.height() || mask.width() != img.width())
    throw DimensionError("apply_spectral_mask: mask/image size mismatch");
  auto coef = dct2(img);
  const std::size_t P = static_cast<std::size_t>(img.height()) * img.width();
  for (int c = 0; c < img.channels(); ++c)
    for (std::size_t i = 0; i < P; ++i)
      if (mask.data[i] == 0) coef.data[c * P + i] = T(0);
  return idct2(coef);
}

template <typename T>
ImageTensor<T> redact(const ImageTensor<T>& img, const RedactionSpec& spec, SeededRng& rng) {
  spec.validate_for(img.height(), img.width());
  if (spec.domain == RedactionDomain::spatial)
    return apply_spatial_mask(img, make_spatial_mask(img.height(), img.width(), spec, rng));
  return apply_spectral_mask(img, make_spectral_mask(img.height(), img.width(), spec));
}

// Redacts every image of an [N,3,H,W] batch with an independent stream per
// item derived from `rng`.
template <typename T>
Tensor<T> redact_batch(const Tensor<T>& batch, const RedactionSpec& spec, const SeededRng& rng) {
  Tensor<T> out(batch.shape());
  const std::size_t per = batch.size() / static_cast<std::size_t>(batch.dim(0));
  for (int n = 0; n < batch.dim(0); ++n) {
    ImageTensor<T> img(unstack_at(batch, n));
    SeededRng item = rng.derive(static_cast<std::uint64_t>(n));
    auto r = redact(img, spec, item);
    std::copy(r.data.data(), r.data.data() + per, out.data() + per * n);
  }
  return out;
}

}  // namespace dejavu
