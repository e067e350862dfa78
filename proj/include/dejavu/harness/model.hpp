#pragma once

#include <optional>
#include <vector>

#include "dejavu/harness/config.hpp"
#include "dejavu/tasks/metrics.hpp"

namespace dejavu::harness {

using ag::Var;

// Everything a run trains or consults. Each component draws its initial
// weights from its own substream, so toggling the CRM or SA leaves the base
// network initialization unchanged.
template <typename T>
struct Model {
  tasks::BaseNet<T> basenet;
  std::optional<crm::CrmParams<T>> crm;
  std::optional<sa::SaParams<T>> sa;
  losses::PerceptualExtractor<T> perceptual;
  losses::TextEmbedder<T> text;

  Model() = default;
  explicit Model(const TrainConfig& cfg) {
    const SeededRng init = SeededRng(cfg.seed).substream("init");
    SeededRng rb = init.substream("basenet");
    basenet = tasks::BaseNet<T>(cfg.basenet(), rb);
    if (cfg.crm_enabled) {
      SeededRng rc = init.substream("crm");
      crm.emplace(cfg.crm(), rc);
    }
    if (cfg.sa.enabled) {
      SeededRng rs = init.substream("sa");
      sa.emplace(cfg.sa, basenet.layout().channels(), rs);
    }
  }

  // Parameters updated by the optimizer.
  nn::ParamSet<T> trainable() const {
    nn::ParamSet<T> ps = basenet.parameters();
    if (crm) ps.append(crm->parameters());
    if (sa) ps.append(sa->parameters());
    return ps;
  }

  nn::ParamSet<T> frozen() const {
    nn::ParamSet<T> ps = perceptual.parameters();
    ps.append(text.parameters());
    return ps;
  }

  // Final predictions: the enhancement pass output when SA is on, otherwise
  // the base network output. The CRM never runs here.
  Var<T> predict(const Var<T>& img, const TrainConfig& cfg, bool training = false) const {
    Var<T> c = basenet.forward(img, training).cond;
    if (sa) c = sa::sa_enhancement_pass(img, c, *sa, cfg.sa, basenet.layout());
    return c;
  }
};

template <typename T>
struct StepLosses {
  Var<T> total;
  Var<T> base;
  Var<T> regen;  // undefined when no regeneration ran
  Var<T> text;
  Var<T> cyc;
  Var<T> cond;         // base network predictions C
  Var<T> final_pred;   // C, or the enhanced predictions when SA is on
  Var<T> regenerated;  // I_G
};

// One forward evaluation of the training objective on a batch:
//   l_base(final predictions) + gamma * l_regen + gamma_text * l_text + gamma_cyc * l_cyc.
// The regeneration graph is skipped when every term that depends on it has
// zero weight, unless `force_regen_graph` is set.
template <typename T>
StepLosses<T> compute_losses(const Model<T>& m, const TrainConfig& cfg, const Var<T>& img,
                             const tasks::GroundTruthBatch<T>& gt, const SeededRng& redaction_rng,
                             bool force_regen_graph = false) {
  StepLosses<T> r;
  const auto layout = m.basenet.layout();
  r.cond = m.basenet.forward(img, true).cond;
  r.final_pred = r.cond;
  if (m.sa) r.final_pred = sa::sa_enhancement_pass(img, r.cond, *m.sa, cfg.sa, layout);
  r.base = tasks::base_loss(tasks::BaseOutputs<T>{r.final_pred}, gt, layout);

  if (cfg.loss.regeneration_active() || force_regen_graph) {
    std::vector<Var<T>> regen_terms;
    if (m.crm) {
      // The redacted image is data, not a learned path: structure has to
      // reach the regenerator through the predictions.
      Var<T> img_r = ag::constant(redact_batch(img.value(), cfg.redaction, redaction_rng));
      r.regenerated = crm::crm_apply(img_r, r.final_pred, *m.crm, cfg.crm(), true);
      regen_terms.push_back(losses::regen_loss(r.regenerated, ag::detach(img), cfg.loss, m.perceptual));
    }
    if (m.sa) {
      Var<T> sa_gen = sa::sa_regeneration_pass(img, r.cond, *m.sa, cfg.sa);
      regen_terms.push_back(losses::regen_loss(sa_gen, ag::detach(img), cfg.loss, m.perceptual));
      if (!r.regenerated.defined()) r.regenerated = sa_gen;
    }
    if (!regen_terms.empty())
      r.regen = regen_terms.size() == 1 ? regen_terms[0]
                                        : ag::weighted_sum(regen_terms, std::vector<T>(regen_terms.size(), T(1)));
    if (r.regenerated.defined()) {
      if (cfg.loss.use_text) r.text = losses::text_supervision_loss(ag::detach(img), r.regenerated, m.text);
      if (cfg.loss.use_cyclic) {
        losses::BaseNetFn<T> h = [&m](const Var<T>& x) { return m.basenet.forward(x, true).cond; };
        r.cyc = losses::cyclic_consistency_loss(r.cond, r.regenerated, h);
      }
    }
  }
  r.total = losses::total_loss(r.base, r.regen, r.text, r.cyc, cfg.loss);
  return r;
}

}  // namespace dejavu::harness
