#pragma once

#include <cmath>
#include <sstream>
#include <vector>

#include "mlpmatch/objective/objective.hpp"

namespace mlpmatch::trainer {

// One iteration's worth of already-augmented tensors. The unlabeled half may
// be empty (purely supervised data); strong views are photometric transforms
// of weak_images, still CutMix-free (boxes are drawn inside the step so they
// can tri-mix the pseudo-label and mask maps).
template <typename T>
struct StepBatch {
  Tensor<T> lab_images;             // {Nl, 3, H, W}
  Tensor<std::int32_t> lab_labels;  // {Nl, H, W}
  Tensor<T> weak_images;            // {Nu, 3, H, W}
  Tensor<T> strong1, strong2;       // {Nu, 3, H, W}
  Tensor<std::int32_t> valid;       // {Nu, H, W}; IGNORE marks padding

  int unlabeled_count() const { return weak_images.size() > 0 ? weak_images.dim(0) : 0; }
};

struct StepSettings {
  objective::LossWeights weights;      // lambda_x_np already resolved for this t
  objective::UnlabeledSpec unlabeled;  // tau, fp rate, cutmix box parameters
  model::PerturbationPolicy policy;
  bool update_running = true;
};

struct StepDiagnostics {
  objective::BatchLosses losses;
  double mask_pass_rate = 0.0;
  std::vector<model::BlockId> chosen;  // skipped blocks: unlabeled branch, then labeled
};

namespace detail {

template <typename T>
void scale_in_place(Tensor<T>& t, double s) {
  const T f = static_cast<T>(s);
  for (auto& v : t) v *= f;
}

inline void check_finite(const objective::BatchLosses& l) {
  if (std::isfinite(l.l_x) && std::isfinite(l.l_x_np) && std::isfinite(l.l_u_s) &&
      std::isfinite(l.l_u_fp) && std::isfinite(l.l_u_np) && std::isfinite(l.total))
    return;
  std::ostringstream os;
  os << "non-finite loss; term dump: l_x=" << l.l_x << " l_x_np=" << l.l_x_np
     << " l_u_s=" << l.l_u_s << " l_u_fp=" << l.l_u_fp << " l_u_np=" << l.l_u_np
     << " total=" << l.total;
  throw NumericError(os.str());
}

}  // namespace detail

// Computes every active loss branch and (when do_backward) accumulates the
// total-loss-weighted parameter gradients. Branches whose weight is zero are
// skipped entirely: no forward, no rng draws. Fixed rng draw order among the
// active branches: CutMix view 1, CutMix view 2, dropout mask, unlabeled skip
// choice, labeled skip choice. Pseudo-labels are recomputed from the weak
// forward unless frozen_pseudo pins them (gradient checks do this, since the
// analytic gradient treats them as constants by design).
template <typename T>
StepDiagnostics compute_step(model::PerturbableSegModel<T>& model, const StepBatch<T>& batch,
                             const StepSettings& settings, Rng& rng, bool do_backward = true,
                             const objective::PseudoResult<T>* frozen_pseudo = nullptr) {
  objective::validate_weights(settings.weights);
  const objective::LossWeights& w = settings.weights;

  using Model = model::PerturbableSegModel<T>;
  typename Model::ForwardOptions train_opt;
  train_opt.training = true;
  train_opt.update_running = settings.update_running;

  StepDiagnostics diag;
  if (do_backward) model.zero_grad();

  const int nu = batch.unlabeled_count();
  const bool unlabeled_active =
      nu > 0 && (w.lambda_u_s > 0.0 || w.lambda_u_fp > 0.0 || w.lambda_u_np > 0.0);

  if (unlabeled_active) {
    objective::PseudoResult<T> local_pseudo;
    const objective::PseudoResult<T>* pseudo = frozen_pseudo;
    if (!pseudo) {
      local_pseudo = objective::pseudo_label(
          objective::softmax_probs(model.forward(batch.weak_images, train_opt)),
          settings.unlabeled.tau, &batch.valid);
      pseudo = &local_pseudo;
    }
    diag.mask_pass_rate = pseudo->pass_rate;

    if (w.lambda_u_s > 0.0) {
      double ce_sum = 0.0;
      for (const Tensor<T>* view : {&batch.strong1, &batch.strong2}) {
        augment::CutMixResult<T> mixed = augment::cutmix_pair(
            *view, pseudo->labels, pseudo->mask, settings.unlabeled.cutmix_prob,
            settings.unlabeled.cutmix_area_min, settings.unlabeled.cutmix_area_max, rng);
        typename Model::ForwardCtx ctx;
        Tensor<T> logits = model.forward(mixed.images, train_opt, do_backward ? &ctx : nullptr);
        Tensor<T> dlogits;
        ce_sum += static_cast<double>(objective::masked_ce<T>(
            logits, mixed.pseudo_labels, &mixed.masks, do_backward ? &dlogits : nullptr));
        if (do_backward) {
          detail::scale_in_place(dlogits, w.lambda_u_s / 2.0);
          model.backward(ctx, dlogits);
        }
      }
      diag.losses.l_u_s = ce_sum / 2.0;
    }

    if (w.lambda_u_fp > 0.0) {
      typename Model::ForwardOptions fp_opt = train_opt;
      fp_opt.feature_dropout_rate = settings.unlabeled.fp_rate;
      fp_opt.rng = &rng;
      typename Model::ForwardCtx ctx;
      Tensor<T> logits = model.forward(batch.weak_images, fp_opt, do_backward ? &ctx : nullptr);
      Tensor<T> dlogits;
      diag.losses.l_u_fp = static_cast<double>(objective::masked_ce<T>(
          logits, pseudo->labels, &pseudo->mask, do_backward ? &dlogits : nullptr));
      if (do_backward) {
        detail::scale_in_place(dlogits, w.lambda_u_fp);
        model.backward(ctx, dlogits);
      }
    }

    if (w.lambda_u_np > 0.0) {
      typename Model::ForwardOptions np_opt = train_opt;
      np_opt.perturb = &settings.policy;
      np_opt.rng = &rng;
      typename Model::ForwardCtx ctx;
      std::vector<model::BlockId> chosen;
      Tensor<T> logits =
          model.forward(batch.weak_images, np_opt, do_backward ? &ctx : nullptr, &chosen);
      diag.chosen.insert(diag.chosen.end(), chosen.begin(), chosen.end());
      Tensor<T> dlogits;
      diag.losses.l_u_np = static_cast<double>(objective::masked_ce<T>(
          logits, pseudo->labels, &pseudo->mask, do_backward ? &dlogits : nullptr));
      if (do_backward) {
        detail::scale_in_place(dlogits, w.lambda_u_np);
        model.backward(ctx, dlogits);
      }
    }
  }

  // Supervised branch: always evaluated (it is the trajectory being trained),
  // but backward only with a positive effective weight.
  {
    const double w_lx = w.lambda_x - w.lambda_x_np;
    typename Model::ForwardCtx ctx;
    const bool bw = do_backward && w_lx > 0.0;
    Tensor<T> logits = model.forward(batch.lab_images, train_opt, bw ? &ctx : nullptr);
    Tensor<T> dlogits;
    diag.losses.l_x = static_cast<double>(
        objective::masked_ce<T>(logits, batch.lab_labels, nullptr, bw ? &dlogits : nullptr));
    if (bw) {
      detail::scale_in_place(dlogits, w_lx);
      model.backward(ctx, dlogits);
    }
  }

  if (w.lambda_x_np > 0.0) {
    typename Model::ForwardOptions np_opt = train_opt;
    np_opt.perturb = &settings.policy;
    np_opt.rng = &rng;
    typename Model::ForwardCtx ctx;
    std::vector<model::BlockId> chosen;
    Tensor<T> logits =
        model.forward(batch.lab_images, np_opt, do_backward ? &ctx : nullptr, &chosen);
    diag.chosen.insert(diag.chosen.end(), chosen.begin(), chosen.end());
    Tensor<T> dlogits;
    diag.losses.l_x_np = static_cast<double>(
        objective::masked_ce<T>(logits, batch.lab_labels, nullptr, do_backward ? &dlogits : nullptr));
    if (do_backward) {
      detail::scale_in_place(dlogits, w.lambda_x_np);
      model.backward(ctx, dlogits);
    }
  }

  diag.losses.total = objective::total_loss(diag.losses, w);
  detail::check_finite(diag.losses);
  return diag;
}

}  // namespace mlpmatch::trainer
