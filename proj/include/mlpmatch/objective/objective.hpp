#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mlpmatch/augment/augment.hpp"
#include "mlpmatch/dataset/sample.hpp"
#include "mlpmatch/model/seg_model.hpp"

namespace mlpmatch::objective {

// Pixel-mean cross-entropy with an ignore index and an optional binary mask.
// The denominator is the count of non-IGNORE pixels; mask zeros keep their
// place in the denominator, they only zero the numerator contribution. If
// dlogits is given it receives d(loss)/d(logits) of the same shape.
template <typename T>
T masked_ce(const Tensor<T>& logits, const Tensor<std::int32_t>& targets, const Tensor<T>* mask,
            Tensor<T>* dlogits = nullptr) {
  if (logits.rank() != 4 || targets.rank() != 3)
    throw ContractError("masked_ce: expected logits {N,C,H,W} and targets {N,H,W}");
  const int n = logits.dim(0), cls = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  if (targets.dim(0) != n || targets.dim(1) != h || targets.dim(2) != w)
    throw ContractError("masked_ce: logits and targets shapes disagree");
  if (mask && !(mask->rank() == 3 && mask->dim(0) == n && mask->dim(1) == h && mask->dim(2) == w))
    throw ContractError("masked_ce: mask shape disagrees with targets");

  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::int64_t valid = 0;
  for (std::int64_t p = 0; p < targets.size(); ++p) {
    const std::int32_t t = targets[p];
    if (t == kIgnoreLabel) continue;
    if (t < 0 || t >= cls)
      throw ContractError("masked_ce: target value " + std::to_string(t) + " out of range");
    ++valid;
  }
  if (dlogits) *dlogits = Tensor<T>(logits.shape());
  if (valid == 0) return T(0);

  double loss_sum = 0.0;
  const T inv_valid = static_cast<T>(1.0 / static_cast<double>(valid));
  std::vector<T> probs(static_cast<std::size_t>(cls));
  for (int i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < plane; ++j) {
      const std::int32_t t = targets[static_cast<std::int64_t>(i) * plane + j];
      if (t == kIgnoreLabel) continue;
      const T wgt = mask ? (*mask)[static_cast<std::int64_t>(i) * plane + j] : T(1);

      const std::int64_t base = static_cast<std::int64_t>(i) * cls * plane + j;
      T mx = logits[base];
      for (int k = 1; k < cls; ++k) mx = std::max(mx, logits[base + static_cast<std::int64_t>(k) * plane]);
      T denom = T(0);
      for (int k = 0; k < cls; ++k) {
        probs[static_cast<std::size_t>(k)] =
            std::exp(logits[base + static_cast<std::int64_t>(k) * plane] - mx);
        denom += probs[static_cast<std::size_t>(k)];
      }
      const T logp_t = logits[base + static_cast<std::int64_t>(t) * plane] - mx - std::log(denom);
      loss_sum += static_cast<double>(-logp_t * wgt);

      if (dlogits && wgt != T(0)) {
        const T scale = wgt * inv_valid;
        for (int k = 0; k < cls; ++k) {
          const T soft = probs[static_cast<std::size_t>(k)] / denom;
          (*dlogits)[base + static_cast<std::int64_t>(k) * plane] =
              scale * (soft - (k == t ? T(1) : T(0)));
        }
      }
    }
  }
  return static_cast<T>(loss_sum / static_cast<double>(valid));
}

// Softmax over the class axis of {N,C,H,W} logits, max-shifted.
template <typename T>
Tensor<T> softmax_probs(const Tensor<T>& logits) {
  const int n = logits.dim(0), cls = logits.dim(1);
  const std::int64_t plane = static_cast<std::int64_t>(logits.dim(2)) * logits.dim(3);
  Tensor<T> probs(logits.shape());
  for (int i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < plane; ++j) {
      const std::int64_t base = static_cast<std::int64_t>(i) * cls * plane + j;
      T mx = logits[base];
      for (int k = 1; k < cls; ++k) mx = std::max(mx, logits[base + static_cast<std::int64_t>(k) * plane]);
      T denom = T(0);
      for (int k = 0; k < cls; ++k) {
        const T e = std::exp(logits[base + static_cast<std::int64_t>(k) * plane] - mx);
        probs[base + static_cast<std::int64_t>(k) * plane] = e;
        denom += e;
      }
      for (int k = 0; k < cls; ++k) probs[base + static_cast<std::int64_t>(k) * plane] /= denom;
    }
  }
  return probs;
}

template <typename T>
struct PseudoResult {
  Tensor<std::int32_t> labels;  // argmax class, IGNORE where the pixel is invalid
  Tensor<T> mask;               // 1 where max prob strictly exceeds tau (and valid)
  double pass_rate = 0.0;       // masked fraction among valid pixels
};

// Hard pseudo-labels and confidence mask from weak-view probabilities.
// Argmax ties resolve to the lowest class index. `valid` is a label map whose
// IGNORE entries mark pixels that must not produce supervision (padding).
template <typename T>
PseudoResult<T> pseudo_label(const Tensor<T>& probs, double tau,
                             const Tensor<std::int32_t>* valid = nullptr) {
  if (probs.rank() != 4) throw ContractError("pseudo_label: expected probs {N,C,H,W}");
  if (tau < 0.0 || tau > 1.0) throw ConfigError("pseudo_label: tau must be in [0, 1]");
  const int n = probs.dim(0), cls = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
  if (valid && !(valid->rank() == 3 && valid->dim(0) == n && valid->dim(1) == h && valid->dim(2) == w))
    throw ContractError("pseudo_label: validity map shape disagrees with probs");

  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  PseudoResult<T> out;
  out.labels = Tensor<std::int32_t>({n, h, w});
  out.mask = Tensor<T>({n, h, w});
  std::int64_t n_valid = 0, n_pass = 0;
  for (int i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < plane; ++j) {
      const std::int64_t flat = static_cast<std::int64_t>(i) * plane + j;
      if (valid && (*valid)[flat] == kIgnoreLabel) {
        out.labels[flat] = kIgnoreLabel;
        out.mask[flat] = T(0);
        continue;
      }
      const std::int64_t base = static_cast<std::int64_t>(i) * cls * plane + j;
      int best = 0;
      T best_p = probs[base];
      for (int k = 1; k < cls; ++k) {
        const T p = probs[base + static_cast<std::int64_t>(k) * plane];
        if (p > best_p) {
          best_p = p;
          best = k;
        }
      }
      out.labels[flat] = best;
      const bool pass = static_cast<double>(best_p) > tau;
      out.mask[flat] = pass ? T(1) : T(0);
      ++n_valid;
      if (pass) ++n_pass;
    }
  }
  out.pass_rate = n_valid > 0 ? static_cast<double>(n_pass) / static_cast<double>(n_valid) : 0.0;
  return out;
}

// L_x: plain cross-entropy of the unperturbed forward against ground truth.
// Eval-mode forward by default so repeated calls are pure and deterministic.
template <typename T>
T supervised_loss(model::PerturbableSegModel<T>& model, const Tensor<T>& images,
                  const Tensor<std::int32_t>& labels, bool training = false) {
  if (labels.size() == 0) throw ContractError("supervised_loss: batch has no labels");
  typename model::PerturbableSegModel<T>::ForwardOptions opt;
  opt.training = training;
  opt.update_running = false;
  Tensor<T> logits = model.forward(images, opt);
  return masked_ce<T>(logits, labels, nullptr);
}

// L_x^np: the same supervision routed through the perturbed sub-network.
template <typename T>
T volatile_supervised_loss(model::PerturbableSegModel<T>& model, const Tensor<T>& images,
                           const Tensor<std::int32_t>& labels,
                           const model::PerturbationPolicy& policy, Rng& rng,
                           std::vector<model::BlockId>* chosen = nullptr) {
  if (!policy.enabled) throw ContractError("volatile_supervised_loss: perturbation policy is disabled");
  if (labels.size() == 0) throw ContractError("volatile_supervised_loss: batch has no labels");
  typename model::PerturbableSegModel<T>::ForwardOptions opt;
  opt.training = false;
  opt.update_running = false;
  opt.perturb = &policy;
  opt.rng = &rng;
  Tensor<T> logits = model.forward(images, opt, nullptr, chosen);
  return masked_ce<T>(logits, labels, nullptr);
}

struct UnlabeledSpec {
  double tau = 0.95;
  double fp_rate = 0.5;
  double cutmix_prob = 0.5;
  double cutmix_area_min = 0.25;
  double cutmix_area_max = 0.5;
};

template <typename T>
struct UnlabeledResult {
  T l_u_s{};
  T l_u_fp{};
  T l_u_np{};
  double mask_pass_rate = 0.0;
  std::vector<model::BlockId> chosen;
};

// The three unsupervised terms, value-only. All forwards run with batch-stat
// normalization but never touch running stats, so this is a pure function of
// (model, batches, rng). Pseudo-labels come from the weak view and are used
// as constants (no gradient path exists by construction). RNG order: CutMix
// view 1, CutMix view 2, dropout mask, skip choice.
template <typename T>
UnlabeledResult<T> unlabeled_losses(model::PerturbableSegModel<T>& model,
                                    const Tensor<T>& weak_images, const Tensor<T>& strong1,
                                    const Tensor<T>& strong2, const Tensor<std::int32_t>& valid,
                                    const UnlabeledSpec& spec,
                                    const model::PerturbationPolicy& policy, Rng& rng) {
  if (!weak_images.same_shape(strong1) || !weak_images.same_shape(strong2))
    throw ContractError("unlabeled_losses: strong views must align with the weak batch");

  using Model = model::PerturbableSegModel<T>;
  typename Model::ForwardOptions plain;
  plain.training = true;
  plain.update_running = false;

  UnlabeledResult<T> out;
  const PseudoResult<T> pseudo =
      pseudo_label(softmax_probs(model.forward(weak_images, plain)), spec.tau, &valid);
  out.mask_pass_rate = pseudo.pass_rate;

  T ce_sum = T(0);
  for (const Tensor<T>* view : {&strong1, &strong2}) {
    augment::CutMixResult<T> mixed =
        augment::cutmix_pair(*view, pseudo.labels, pseudo.mask, spec.cutmix_prob,
                             spec.cutmix_area_min, spec.cutmix_area_max, rng);
    Tensor<T> logits = model.forward(mixed.images, plain);
    ce_sum += masked_ce<T>(logits, mixed.pseudo_labels, &mixed.masks);
  }
  out.l_u_s = ce_sum / T(2);

  typename Model::ForwardOptions fp = plain;
  fp.feature_dropout_rate = spec.fp_rate;
  fp.rng = &rng;
  out.l_u_fp = masked_ce<T>(model.forward(weak_images, fp), pseudo.labels, &pseudo.mask);

  typename Model::ForwardOptions np = plain;
  np.perturb = &policy;
  np.rng = &rng;
  out.l_u_np =
      masked_ce<T>(model.forward(weak_images, np, nullptr, &out.chosen), pseudo.labels, &pseudo.mask);
  return out;
}

struct LossWeights {
  double lambda_x = 1.0;
  double lambda_x_np = 0.0;  // scheduled per iteration
  double lambda_u_s = 0.5;
  double lambda_u_fp = 0.25;
  double lambda_u_np = 0.25;
};

struct BatchLosses {
  double l_x = 0.0;
  double l_x_np = 0.0;
  double l_u_s = 0.0;
  double l_u_fp = 0.0;
  double l_u_np = 0.0;
  double total = 0.0;
};

inline void validate_weights(const LossWeights& w) {
  if (w.lambda_x < 0.0 || w.lambda_u_s < 0.0 || w.lambda_u_fp < 0.0 || w.lambda_u_np < 0.0 ||
      w.lambda_x_np < 0.0)
    throw ConfigError("loss weights must be non-negative");
  if (w.lambda_x_np > w.lambda_x)
    throw ConfigError("lambda_x_np must not exceed lambda_x (labeled weight would go negative)");
}

// total = (λ_x − λ_x^np)·l_x + λ_x^np·l_x_np + λ_u^s·l_u_s + λ_u^fp·l_u_fp + λ_u^np·l_u_np
inline double total_loss(double l_x, double l_x_np, double l_u_s, double l_u_fp, double l_u_np,
                         const LossWeights& w) {
  validate_weights(w);
  return (w.lambda_x - w.lambda_x_np) * l_x + w.lambda_x_np * l_x_np + w.lambda_u_s * l_u_s +
         w.lambda_u_fp * l_u_fp + w.lambda_u_np * l_u_np;
}

inline double total_loss(const BatchLosses& t, const LossWeights& w) {
  return total_loss(t.l_x, t.l_x_np, t.l_u_s, t.l_u_fp, t.l_u_np, w);
}

}  // namespace mlpmatch::objective
