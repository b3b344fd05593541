#pragma once

#include <vector>

#include "mlpmatch/dataset/sample.hpp"
#include "mlpmatch/model/seg_model.hpp"

namespace mlpmatch::trainer {

struct EvalReport {
  std::vector<double> per_class_iou;  // indexed by class; 0 where not counted
  std::vector<bool> class_counted;    // class had nonzero union (enters the mean)
  double miou = 0.0;
  Tensor<std::int64_t> confusion;     // {C, C}; row = ground truth, col = prediction
};

// Turns a filled confusion matrix into per-class IoU and their mean. Classes
// absent from both prediction and truth (zero union) stay out of the mean.
inline EvalReport reduce_confusion(Tensor<std::int64_t> confusion) {
  if (confusion.rank() != 2 || confusion.dim(0) != confusion.dim(1))
    throw ContractError("reduce_confusion: confusion matrix must be square");
  const int cls = confusion.dim(0);
  EvalReport report;
  report.confusion = std::move(confusion);

  std::int64_t total = 0;
  for (std::int64_t i = 0; i < report.confusion.size(); ++i) total += report.confusion[i];
  if (total == 0) throw ContractError("evaluate: every pixel is IGNORE, nothing to score");

  report.per_class_iou.assign(static_cast<std::size_t>(cls), 0.0);
  report.class_counted.assign(static_cast<std::size_t>(cls), false);
  double sum = 0.0;
  int counted = 0;
  for (int c = 0; c < cls; ++c) {
    std::int64_t tp = report.confusion[static_cast<std::int64_t>(c) * cls + c];
    std::int64_t row = 0, col = 0;
    for (int k = 0; k < cls; ++k) {
      row += report.confusion[static_cast<std::int64_t>(c) * cls + k];
      col += report.confusion[static_cast<std::int64_t>(k) * cls + c];
    }
    const std::int64_t uni = row + col - tp;
    if (uni == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    report.per_class_iou[static_cast<std::size_t>(c)] = iou;
    report.class_counted[static_cast<std::size_t>(c)] = true;
    sum += iou;
    ++counted;
  }
  report.miou = counted > 0 ? sum / counted : 0.0;
  return report;
}

// Plain eval-mode inference over the whole set; never engages perturbation.
// Pixels whose ground truth is IGNORE stay out of the confusion matrix.
template <typename T>
EvalReport evaluate(model::PerturbableSegModel<T>& model, const std::vector<Sample>& samples,
                    int eval_batch = 8) {
  if (samples.empty()) throw ContractError("evaluate: empty evaluation set");
  const int cls = model.num_classes();
  Tensor<std::int64_t> confusion({cls, cls});

  for (std::size_t start = 0; start < samples.size();) {
    // group a run of same-sized images into one forward
    const int h = samples[start].height(), w = samples[start].width();
    std::size_t end = start;
    while (end < samples.size() && static_cast<int>(end - start) < eval_batch &&
           samples[end].height() == h && samples[end].width() == w) {
      if (!samples[end].label)
        throw ContractError("evaluate: sample '" + samples[end].id + "' has no label");
      ++end;
    }
    const int n = static_cast<int>(end - start);

    Tensor<T> images({n, 3, h, w});
    for (int i = 0; i < n; ++i) {
      const Image& img = samples[start + static_cast<std::size_t>(i)].image;
      for (std::int64_t j = 0; j < img.size(); ++j)
        images[static_cast<std::int64_t>(i) * img.size() + j] = static_cast<T>(img[j]);
    }
    typename model::PerturbableSegModel<T>::ForwardOptions opt;
    opt.training = false;
    opt.update_running = false;
    Tensor<T> logits = model.forward(images, opt);

    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int i = 0; i < n; ++i) {
      const LabelMap& truth = *samples[start + static_cast<std::size_t>(i)].label;
      for (std::int64_t j = 0; j < plane; ++j) {
        const std::int32_t t = truth[j];
        if (t == kIgnoreLabel) continue;
        if (t < 0 || t >= cls)
          throw DataError("evaluate: label " + std::to_string(t) + " out of range in sample '" +
                          samples[start + static_cast<std::size_t>(i)].id + "'");
        const std::int64_t base = static_cast<std::int64_t>(i) * cls * plane + j;
        int best = 0;
        T best_v = logits[base];
        for (int k = 1; k < cls; ++k) {
          const T v = logits[base + static_cast<std::int64_t>(k) * plane];
          if (v > best_v) {
            best_v = v;
            best = k;
          }
        }
        confusion[static_cast<std::int64_t>(t) * cls + best]++;
      }
    }
    start = end;
  }

  return reduce_confusion(std::move(confusion));
}

}  // namespace mlpmatch::trainer
