#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "dejavu/core/image.hpp"
#include "dejavu/nn/module.hpp"

namespace dejavu::tasks {

using ag::Var;

enum class TaskSet { segmentation, depth, normals, multitask };

inline std::string_view to_string(TaskSet t) {
  switch (t) {
    case TaskSet::segmentation: return "segmentation";
    case TaskSet::depth: return "depth";
    case TaskSet::normals: return "normals";
    case TaskSet::multitask: return "multitask";
  }
  return "?";
}

inline TaskSet task_set_from_string(std::string_view s) {
  if (s == "multitask") return TaskSet::multitask;
  switch (task_from_string(s)) {
    case TaskKind::segmentation: return TaskSet::segmentation;
    case TaskKind::depth: return TaskSet::depth;
    case TaskKind::normals: return TaskSet::normals;
  }
  return TaskSet::segmentation;
}

inline std::vector<TaskKind> tasks_of(TaskSet t) {
  switch (t) {
    case TaskSet::segmentation: return {TaskKind::segmentation};
    case TaskSet::depth: return {TaskKind::depth};
    case TaskSet::normals: return {TaskKind::normals};
    case TaskSet::multitask: return {TaskKind::segmentation, TaskKind::depth, TaskKind::normals};
  }
  return {};
}

inline int task_channels(TaskKind k, int classes) {
  switch (k) {
    case TaskKind::segmentation: return classes;
    case TaskKind::depth: return 1;
    case TaskKind::normals: return 3;
  }
  return 0;
}

// Where each task's channels live inside a (possibly multi-task) condition
// tensor. Tasks appear in the fixed order segmentation, depth, normals.
struct ConditionLayout {
  struct Slot {
    TaskKind task;
    int begin;
    int end;
  };
  std::vector<Slot> slots;

  ConditionLayout() = default;
  ConditionLayout(TaskSet set, int classes) {
    int c = 0;
    for (TaskKind k : tasks_of(set)) {
      const int n = task_channels(k, classes);
      slots.push_back({k, c, c + n});
      c += n;
    }
  }
  int channels() const { return slots.empty() ? 0 : slots.back().end; }
  const Slot* find(TaskKind k) const {
    for (const auto& s : slots)
      if (s.task == k) return &s;
    return nullptr;
  }
};

// Applies the per-task output activation to raw head outputs:
// softmax for segmentation, exp for depth, unit normalization for normals.
template <typename T>
Var<T> activate(const Var<T>& raw, TaskKind k) {
  switch (k) {
    case TaskKind::segmentation: return ag::softmax_channels(raw);
    case TaskKind::depth: return ag::exp(raw);
    case TaskKind::normals: return ag::l2_normalize_channels(raw);
  }
  return raw;
}

template <typename T>
Var<T> activate_layout(const Var<T>& raw, const ConditionLayout& layout) {
  if (layout.slots.size() == 1) return activate(raw, layout.slots[0].task);
  std::vector<Var<T>> parts;
  for (const auto& s : layout.slots) parts.push_back(activate(ag::slice_channels(raw, s.begin, s.end), s.task));
  return ag::concat_channels(parts);
}

struct BaseNetConfig {
  TaskSet task = TaskSet::segmentation;
  int classes = 3;
  int width = 32;
  int depth_levels = 3;

  void validate() const {
    if (task == TaskSet::segmentation || task == TaskSet::multitask)
      if (classes < 2) throw ConfigError("basenet.classes must be >= 2 for segmentation");
    if (width <= 0) throw ConfigError("basenet.width must be positive");
    if (depth_levels < 1) throw ConfigError("basenet.levels must be >= 1");
  }
  ConditionLayout layout() const { return ConditionLayout(task, classes); }
  friend bool operator==(const BaseNetConfig&, const BaseNetConfig&) = default;
};

// Predictions of the base network: `cond` holds all task channels laid out
// per ConditionLayout.
template <typename T>
struct BaseOutputs {
  Var<T> cond;
  Var<T> task(const ConditionLayout& layout, TaskKind k) const {
    const auto* s = layout.find(k);
    if (!s) throw ConfigError("prediction has no " + std::string(to_string(k)) + " head");
    if (layout.slots.size() == 1) return cond;
    return ag::slice_channels(cond, s->begin, s->end);
  }
};

// Strided conv encoder with a skip-connected transposed-conv decoder and one
// 1x1 head per task. In multi-task mode the trunk is shared by all heads.
template <typename T>
class BaseNet {
 public:
  BaseNet() = default;
  BaseNet(const BaseNetConfig& cfg, SeededRng& rng) : cfg_(cfg) {
    cfg.validate();
    const int w = cfg.width;
    encoder_.emplace_back(3, w, 1, rng);
    for (int l = 1; l < cfg.depth_levels; ++l) encoder_.emplace_back(w, w, 2, rng);
    for (int l = 1; l < cfg.depth_levels; ++l) {
      up_.emplace_back(w, w, 2, 2, 0, rng);
      fuse_.emplace_back(2 * w, w, 1, rng);
    }
    for (const auto& s : cfg.layout().slots) heads_.emplace_back(w, s.end - s.begin, 1, 1, 0, rng);
  }

  const BaseNetConfig& config() const { return cfg_; }
  ConditionLayout layout() const { return cfg_.layout(); }

  // Raw (pre-activation) head outputs concatenated per layout.
  Var<T> logits(const Var<T>& img, bool training) const {
    const int levels = cfg_.depth_levels;
    if (img.dim(2) % (1 << (levels - 1)) || img.dim(3) % (1 << (levels - 1)))
      throw ConfigError("basenet: image size must be divisible by 2^(levels-1)");
    std::vector<Var<T>> skips;
    Var<T> h = img;
    for (const auto& e : encoder_) {
      h = e(h, training);
      skips.push_back(h);
    }
    for (int l = levels - 1; l >= 1; --l) {
      const auto idx = static_cast<std::size_t>(l - 1);
      Var<T> up = up_[idx](h);
      h = fuse_[idx](ag::concat_channels<T>({up, skips[idx]}), training);
    }
    if (heads_.size() == 1) return heads_[0](h);
    std::vector<Var<T>> outs;
    for (const auto& head : heads_) outs.push_back(head(h));
    return ag::concat_channels(outs);
  }

  BaseOutputs<T> forward(const Var<T>& img, bool training) const {
    return {activate_layout(logits(img, training), layout())};
  }

  nn::ParamSet<T> encoder_parameters() const {
    nn::ParamSet<T> ps;
    for (std::size_t l = 0; l < encoder_.size(); ++l) encoder_[l].collect(ps, "basenet.enc" + std::to_string(l));
    return ps;
  }

  nn::ParamSet<T> parameters() const {
    nn::ParamSet<T> ps = encoder_parameters();
    for (std::size_t l = 0; l < up_.size(); ++l) {
      up_[l].collect(ps, "basenet.up" + std::to_string(l));
      fuse_[l].collect(ps, "basenet.fuse" + std::to_string(l));
    }
    const auto lay = layout();
    for (std::size_t k = 0; k < heads_.size(); ++k)
      heads_[k].collect(ps, "basenet.head." + std::string(to_string(lay.slots[k].task)));
    return ps;
  }

 private:
  BaseNetConfig cfg_;
  std::vector<nn::ConvBnRelu<T>> encoder_;
  std::vector<nn::ConvTranspose2d<T>> up_;
  std::vector<nn::ConvBnRelu<T>> fuse_;
  std::vector<nn::Conv2d<T>> heads_;
};

template <typename T>
BaseOutputs<T> basenet_forward(const Var<T>& img, const BaseNet<T>& net, bool training) {
  return net.forward(img, training);
}

}  // namespace dejavu::tasks
