#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "dejavu/core/errors.hpp"
#include "dejavu/core/tensor.hpp"

namespace dejavu {

enum class TaskKind { segmentation, depth, normals };

inline std::string_view to_string(TaskKind t) {
  switch (t) {
    case TaskKind::segmentation: return "segmentation";
    case TaskKind::depth: return "depth";
    case TaskKind::normals: return "normals";
  }
  return "?";
}

inline TaskKind task_from_string(std::string_view s) {
  if (s == "segmentation" || s == "seg") return TaskKind::segmentation;
  if (s == "depth") return TaskKind::depth;
  if (s == "normals") return TaskKind::normals;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

// C x H x W image with values nominally in [0, 1].
template <typename T>
struct ImageTensor {
  Tensor<T> data;

  ImageTensor() = default;
  explicit ImageTensor(Tensor<T> t) : data(std::move(t)) {
    if (data.rank() != 3) throw DimensionError("ImageTensor must be C x H x W, got " + shape_str(data.shape()));
  }
  ImageTensor(int c, int h, int w, T fill = T(0)) : data(Shape{c, h, w}, fill) {}

  int channels() const { return data.dim(0); }
  int height() const { return data.dim(1); }
  int width() const { return data.dim(2); }
  const Shape& shape() const { return data.shape(); }
  T& at(int c, int h, int w) { return data.at(c, h, w); }
  const T& at(int c, int h, int w) const { return data.at(c, h, w); }

  bool in_unit_range() const {
    for (T v : data.vec())
      if (!(v >= T(0) && v <= T(1))) return false;
    return true;
  }
};

// N x H x W dense prediction or target for one task.
template <typename T>
struct DenseCondition {
  Tensor<T> data;
  TaskKind task = TaskKind::segmentation;

  DenseCondition() = default;
  DenseCondition(Tensor<T> t, TaskKind k) : data(std::move(t)), task(k) {
    if (data.rank() != 3) throw DimensionError("DenseCondition must be N x H x W, got " + shape_str(data.shape()));
  }

  int channels() const { return data.dim(0); }
  int height() const { return data.dim(1); }
  int width() const { return data.dim(2); }

  // Checks the per-task invariants: probability simplex, positive depth or
  // unit-norm normals.
  bool satisfies_invariants(double prob_tol = 1e-5, double norm_tol = 1e-4) const {
    const int n = channels(), h = height(), w = width();
    if (!data.all_finite()) return false;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int c = 0; c < n; ++c) {
          const double v = data.at(c, y, x);
          switch (task) {
            case TaskKind::segmentation:
              if (v < 0) return false;
              acc += v;
              break;
            case TaskKind::depth:
              if (!(v > 0)) return false;
              break;
            case TaskKind::normals:
              acc += v * v;
              break;
          }
        }
        if (task == TaskKind::segmentation && std::abs(acc - 1.0) > prob_tol) return false;
        if (task == TaskKind::normals && std::abs(std::sqrt(acc) - 1.0) > norm_tol) return false;
      }
    return true;
  }
};

}  // namespace dejavu
