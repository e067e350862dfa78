#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "dejavu/tasks/basenet.hpp"
#include "dejavu/tasks/ground_truth.hpp"

namespace dejavu::tasks {

// Supervised loss for one task: cross-entropy on probabilities, L1 on depth,
// 1 - cosine on normals. All are averaged over valid pixels.
template <typename T>
Var<T> base_loss(const Var<T>& pred, const GroundTruthBatch<T>& gt, TaskKind task) {
  switch (task) {
    case TaskKind::segmentation: return ag::cross_entropy_prob(pred, gt.seg, gt.valid);
    case TaskKind::depth: return ag::masked_l1(pred, gt.depth, gt.valid);
    case TaskKind::normals: return ag::masked_cosine(pred, gt.normals, gt.normal_valid);
  }
  throw ConfigError("unknown task");
}

// Sum of the per-task losses over every task in the layout.
template <typename T>
Var<T> base_loss(const BaseOutputs<T>& out, const GroundTruthBatch<T>& gt, const ConditionLayout& layout) {
  std::vector<Var<T>> terms;
  for (const auto& s : layout.slots) terms.push_back(base_loss(out.task(layout, s.task), gt, s.task));
  if (terms.size() == 1) return terms[0];
  return ag::weighted_sum(terms, std::vector<T>(terms.size(), T(1)));
}

struct MetricSet {
  std::optional<double> miou;
  std::optional<double> a_err;  // identical to abs_rel
  std::optional<double> m_err_deg;
  std::optional<double> abs_rel;
  std::optional<double> sq_rel;
  std::optional<double> delta1;
};

inline constexpr double kDelta1Threshold = 1.25;

// Streams predictions and accumulates dataset-level statistics. mIoU uses
// summed intersections and unions; classes absent from both prediction and
// ground truth are skipped.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(int classes = 0) : inter_(classes, 0), uni_(classes, 0) {}

  // prob: [C,H,W] class probabilities
  template <typename T>
  void add_segmentation(const Tensor<T>& prob, const Tensor<int>& labels, const Tensor<T>& valid) {
    const int C = prob.dim(0), H = prob.dim(1), W = prob.dim(2);
    if (static_cast<int>(inter_.size()) < C) {
      inter_.resize(C, 0);
      uni_.resize(C, 0);
    }
    seg_seen_ = true;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * W + x;
        if (valid[i] == T(0)) continue;
        int best = 0;
        for (int c = 1; c < C; ++c)
          if (prob.at(c, y, x) > prob.at(best, y, x)) best = c;
        add_label_pair(best, labels[i]);
      }
  }

  void add_label_pair(int pred, int gt) {
    const int C = static_cast<int>(inter_.size());
    if (pred < 0 || gt < 0 || pred >= C || gt >= C) throw DimensionError("metric: label out of range");
    seg_seen_ = true;
    if (pred == gt) {
      inter_[pred] += 1;
      uni_[pred] += 1;
    } else {
      uni_[pred] += 1;
      uni_[gt] += 1;
    }
  }

  template <typename T>
  void add_depth(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& valid) {
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (valid[i] == T(0)) continue;
      const double d = gt[i], p = pred[i];
      const double diff = p - d;
      abs_rel_ += std::abs(diff) / d;
      sq_rel_ += diff * diff / d;
      if (std::max(p / d, d / p) < kDelta1Threshold) delta_hits_ += 1;
      depth_n_ += 1;
    }
  }

  // pred, gt: [3,H,W]; prediction is normalized before the angle is taken.
  template <typename T>
  void add_normals(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& valid) {
    const int H = gt.dim(1), W = gt.dim(2);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        if (valid[static_cast<std::size_t>(y) * W + x] == T(0)) continue;
        double dot = 0, pn = 0, gn = 0;
        for (int c = 0; c < 3; ++c) {
          dot += double(pred.at(c, y, x)) * gt.at(c, y, x);
          pn += double(pred.at(c, y, x)) * pred.at(c, y, x);
          gn += double(gt.at(c, y, x)) * gt.at(c, y, x);
        }
        const double denom = std::sqrt(pn * gn);
        const double cosv = denom > 0 ? std::clamp(dot / denom, -1.0, 1.0) : -1.0;
        ang_sum_ += std::acos(cosv) * 180.0 / std::numbers::pi;
        normal_n_ += 1;
      }
  }

  MetricSet result() const {
    MetricSet m;
    if (seg_seen_) {
      double s = 0;
      int k = 0;
      for (std::size_t c = 0; c < inter_.size(); ++c)
        if (uni_[c] > 0) {
          s += static_cast<double>(inter_[c]) / static_cast<double>(uni_[c]);
          ++k;
        }
      m.miou = k ? s / k : 0.0;
    }
    if (depth_n_ > 0) {
      m.abs_rel = abs_rel_ / depth_n_;
      m.a_err = m.abs_rel;
      m.sq_rel = sq_rel_ / depth_n_;
      m.delta1 = delta_hits_ / depth_n_;
    }
    if (normal_n_ > 0) m.m_err_deg = ang_sum_ / normal_n_;
    return m;
  }

 private:
  std::vector<long> inter_, uni_;
  bool seg_seen_ = false;
  double abs_rel_ = 0, sq_rel_ = 0, delta_hits_ = 0, depth_n_ = 0;
  double ang_sum_ = 0, normal_n_ = 0;
};

template <typename T>
MetricSet compute_metrics(const DenseCondition<T>& cond, const GroundTruth<T>& gt) {
  MetricAccumulator acc(cond.task == TaskKind::segmentation ? cond.channels() : 0);
  switch (cond.task) {
    case TaskKind::segmentation: acc.add_segmentation(cond.data, gt.seg, gt.valid); break;
    case TaskKind::depth: acc.add_depth(cond.data, gt.depth, gt.valid); break;
    case TaskKind::normals: acc.add_normals(cond.data, gt.normals, gt.normal_valid); break;
  }
  return acc.result();
}

// Adds every task of a batched prediction [N,C,H,W] to the accumulator.
template <typename T>
void accumulate_batch(MetricAccumulator& acc, const Tensor<T>& cond, const ConditionLayout& layout,
                      const std::vector<const GroundTruth<T>*>& gts) {
  const int N = cond.dim(0), C = cond.dim(1), H = cond.dim(2), W = cond.dim(3);
  const std::size_t P = static_cast<std::size_t>(H) * W;
  for (int n = 0; n < N; ++n)
    for (const auto& s : layout.slots) {
      const int k = s.end - s.begin;
      Tensor<T> part(Shape{k, H, W});
      std::copy_n(cond.data() + (static_cast<std::size_t>(n) * C + s.begin) * P, k * P, part.data());
      const auto& g = *gts[static_cast<std::size_t>(n)];
      switch (s.task) {
        case TaskKind::segmentation: acc.add_segmentation(part, g.seg, g.valid); break;
        case TaskKind::depth: acc.add_depth(part, g.depth, g.valid); break;
        case TaskKind::normals: acc.add_normals(part, g.normals, g.normal_valid); break;
      }
    }
}

}  // namespace dejavu::tasks
