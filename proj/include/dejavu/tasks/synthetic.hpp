#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "dejavu/core/image.hpp"
#include "dejavu/core/rng.hpp"
#include "dejavu/tasks/ground_truth.hpp"

namespace dejavu::tasks {

// Scenes of spheres and axis-aligned boxes resting in a ground plane, viewed
// orthographically from above. The image spans [0,1] x [0,1] world units;
// depth is the distance along the viewing axis and normals point toward the
// camera (+z).
struct SyntheticSceneSpec {
  int height = 64;
  int width = 64;
  int num_shapes = 4;
  int shape_classes = 3;  // 2: background + spheres, 3: background + spheres + boxes
  std::uint64_t seed = 1234;
  int train = 500;
  int val = 100;

  void validate() const {
    if (height < 4 || width < 4) throw ConfigError("data.size must be at least 4");
    if (num_shapes < 0) throw ConfigError("data.num_shapes must be non-negative");
    if (shape_classes < 2 || shape_classes > 3) throw ConfigError("data.classes must be 2 or 3");
    if (train < 0 || val < 0) throw ConfigError("split sizes must be non-negative");
  }
  friend bool operator==(const SyntheticSceneSpec&, const SyntheticSceneSpec&) = default;
};

inline constexpr double kPlaneDepth = 1.0;
inline constexpr int kBackgroundClass = 0;
inline constexpr int kSphereClass = 1;
inline constexpr int kBoxClass = 2;

struct SphereShape {
  double cx, cy, r;  // center lies in the plane, so the apex depth is plane - r
  std::array<double, 3> albedo;
};

struct BoxShape {
  double x0, y0, x1, y1, height;
  std::array<double, 3> albedo;
};

struct SceneDescription {
  std::array<double, 3> plane_albedo{0.5, 0.5, 0.5};
  double texture_amp = 0.0;
  double texture_fx = 0.0, texture_fy = 0.0, texture_phase = 0.0;
  std::vector<SphereShape> spheres;
  std::vector<BoxShape> boxes;
};

template <typename T>
struct Sample {
  ImageTensor<T> image;
  GroundTruth<T> gt;
  std::uint64_t seed = 0;
};

inline std::array<double, 3> light_direction() {
  const double x = -0.4, y = -0.5, z = 0.75;
  const double n = std::sqrt(x * x + y * y + z * z);
  return {x / n, y / n, z / n};
}

template <typename T>
Sample<T> render_scene(const SceneDescription& scene, int H, int W) {
  Sample<T> s;
  s.image = ImageTensor<T>(3, H, W);
  s.gt.seg = Tensor<int>(Shape{H, W});
  s.gt.depth = Tensor<T>(Shape{1, H, W});
  s.gt.normals = Tensor<T>(Shape{3, H, W});
  s.gt.valid = Tensor<T>::ones({H, W});
  s.gt.normal_valid = Tensor<T>::ones({H, W});
  std::vector<int> surface(static_cast<std::size_t>(H) * W, -1);  // -1 = plane
  const auto L = light_direction();

  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double wx = (x + 0.5) / W, wy = (y + 0.5) / H;
      double depth = kPlaneDepth;
      std::array<double, 3> n{0, 0, 1};
      const double tex = 1.0 + scene.texture_amp *
                                   std::sin(scene.texture_fx * wx + scene.texture_fy * wy + scene.texture_phase);
      std::array<double, 3> albedo{scene.plane_albedo[0] * tex, scene.plane_albedo[1] * tex,
                                   scene.plane_albedo[2] * tex};
      int label = kBackgroundClass, sid = -1;
      for (std::size_t k = 0; k < scene.spheres.size(); ++k) {
        const auto& sp = scene.spheres[k];
        const double dx = wx - sp.cx, dy = wy - sp.cy;
        const double q = sp.r * sp.r - dx * dx - dy * dy;
        if (q <= 0) continue;
        const double h = std::sqrt(q);
        const double d = kPlaneDepth - h;
        if (d < depth) {
          depth = d;
          n = {dx / sp.r, dy / sp.r, h / sp.r};
          albedo = sp.albedo;
          label = kSphereClass;
          sid = static_cast<int>(k);
        }
      }
      for (std::size_t k = 0; k < scene.boxes.size(); ++k) {
        const auto& b = scene.boxes[k];
        if (wx < b.x0 || wx >= b.x1 || wy < b.y0 || wy >= b.y1) continue;
        const double d = kPlaneDepth - b.height;
        if (d < depth) {
          depth = d;
          n = {0, 0, 1};
          albedo = b.albedo;
          label = kBoxClass;
          sid = 1000 + static_cast<int>(k);
        }
      }
      const double shade = 0.35 + 0.65 * std::max(0.0, n[0] * L[0] + n[1] * L[1] + n[2] * L[2]);
      for (int c = 0; c < 3; ++c) {
        s.image.at(c, y, x) = static_cast<T>(std::clamp(albedo[c] * shade, 0.0, 1.0));
        s.gt.normals.at(c, y, x) = static_cast<T>(n[c]);
      }
      s.gt.depth.at(0, y, x) = static_cast<T>(depth);
      s.gt.seg[static_cast<std::size_t>(y) * W + x] = label;
      surface[static_cast<std::size_t>(y) * W + x] = sid;
    }

  // Analytic normals jump at silhouettes; drop the one-pixel band around them.
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int id = surface[static_cast<std::size_t>(y) * W + x];
      bool edge = false;
      for (auto [dy, dx] : {std::pair{-1, 0}, std::pair{1, 0}, std::pair{0, -1}, std::pair{0, 1}}) {
        const int yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
        if (surface[static_cast<std::size_t>(yy) * W + xx] != id) edge = true;
      }
      if (edge) s.gt.normal_valid[static_cast<std::size_t>(y) * W + x] = T(0);
    }
  return s;
}

inline std::array<double, 3> random_color(SeededRng& rng, double lo, double hi) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

inline SceneDescription random_scene(const SyntheticSceneSpec& spec, SeededRng& rng) {
  SceneDescription sc;
  sc.plane_albedo = random_color(rng, 0.25, 0.75);
  sc.texture_amp = rng.uniform(0.05, 0.2);
  sc.texture_fx = rng.uniform(-30.0, 30.0);
  sc.texture_fy = rng.uniform(-30.0, 30.0);
  sc.texture_phase = rng.uniform(0.0, 6.283185307179586);
  for (int k = 0; k < spec.num_shapes; ++k) {
    const bool sphere = spec.shape_classes == 2 || rng.bernoulli(0.5);
    if (sphere) {
      const double r = rng.uniform(0.08, 0.2);
      sc.spheres.push_back({rng.uniform(r, 1.0 - r), rng.uniform(r, 1.0 - r), r, random_color(rng, 0.3, 1.0)});
    } else {
      const double w = rng.uniform(0.12, 0.35), h = rng.uniform(0.12, 0.35);
      const double x0 = rng.uniform(0.0, 1.0 - w), y0 = rng.uniform(0.0, 1.0 - h);
      sc.boxes.push_back({x0, y0, x0 + w, y0 + h, rng.uniform(0.05, 0.3), random_color(rng, 0.3, 1.0)});
    }
  }
  return sc;
}

template <typename T>
Sample<T> generate_scene(const SyntheticSceneSpec& spec, std::uint64_t scene_seed) {
  SeededRng rng(scene_seed);
  auto s = render_scene<T>(random_scene(spec, rng), spec.height, spec.width);
  s.seed = scene_seed;
  return s;
}

template <typename T>
struct SyntheticDataset {
  std::vector<Sample<T>> train;
  std::vector<Sample<T>> val;
};

inline std::uint64_t scene_seed(const SyntheticSceneSpec& spec, bool train, int index) {
  return SeededRng(spec.seed).substream(train ? "train" : "val").derive(static_cast<std::uint64_t>(index)).seed();
}

template <typename T>
SyntheticDataset<T> generate_synthetic_dataset(const SyntheticSceneSpec& spec) {
  spec.validate();
  SyntheticDataset<T> ds;
  for (int i = 0; i < spec.train; ++i) ds.train.push_back(generate_scene<T>(spec, scene_seed(spec, true, i)));
  for (int i = 0; i < spec.val; ++i) ds.val.push_back(generate_scene<T>(spec, scene_seed(spec, false, i)));
  return ds;
}

}  // namespace dejavu::tasks
