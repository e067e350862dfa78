#pragma once

#include <span>
#include <vector>

#include "dejavu/core/image.hpp"

namespace dejavu::tasks {

// Per-image targets for all three tasks. `valid` applies to segmentation and
// depth; `normal_valid` additionally drops the one-pixel silhouette band.
template <typename T>
struct GroundTruth {
  Tensor<int> seg;      // H x W labels
  Tensor<T> depth;      // 1 x H x W
  Tensor<T> normals;    // 3 x H x W
  Tensor<T> valid;      // H x W, 0/1
  Tensor<T> normal_valid;  // H x W, 0/1

  int height() const { return seg.dim(0); }
  int width() const { return seg.dim(1); }
};

// Stacked targets for a minibatch.
template <typename T>
struct GroundTruthBatch {
  Tensor<int> seg;      // N x H x W
  Tensor<T> depth;      // N x 1 x H x W
  Tensor<T> normals;    // N x 3 x H x W
  Tensor<T> valid;      // N x H x W
  Tensor<T> normal_valid;  // N x H x W
};

template <typename T>
GroundTruthBatch<T> stack_ground_truth(std::span<const GroundTruth<T>* const> items) {
  std::vector<Tensor<int>> seg;
  std::vector<Tensor<T>> depth, normals, valid, nvalid;
  for (const auto* g : items) {
    seg.push_back(g->seg);
    depth.push_back(g->depth);
    normals.push_back(g->normals);
    valid.push_back(g->valid);
    nvalid.push_back(g->normal_valid);
  }
  return {stack<int>(seg), stack<T>(depth), stack<T>(normals), stack<T>(valid), stack<T>(nvalid)};
}

template <typename T>
GroundTruthBatch<T> single_batch(const GroundTruth<T>& g) {
  const GroundTruth<T>* p = &g;
  return stack_ground_truth<T>(std::span<const GroundTruth<T>* const>(&p, 1));
}

}  // namespace dejavu::tasks
