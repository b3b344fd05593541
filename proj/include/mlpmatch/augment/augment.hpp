#pragma once

#include <array>

#include "mlpmatch/core/rng.hpp"
#include "mlpmatch/dataset/sample.hpp"

namespace mlpmatch::augment {

using dataset::Image;
using dataset::LabelMap;
using dataset::Sample;

struct WeakAugSpec {
  int crop_size = 64;
  double scale_min = 0.5;
  double scale_max = 2.0;
  double hflip_prob = 0.5;
};

struct StrongAugSpec {
  double color_jitter_prob = 0.8;
  double grayscale_prob = 0.2;
  double blur_prob = 0.5;
  double cutmix_prob = 0.5;
  // brightness, contrast, saturation, hue
  std::array<double, 4> jitter_strengths = {0.5, 0.5, 0.5, 0.25};
};

struct CutMixBox {
  int top = 0, left = 0, height = 0, width = 0;
};

// Geometry primitives. Images are {3, H, W}; labels use nearest-neighbor so
// class ids stay exact.
Image hflip_image(const Image& img);
LabelMap hflip_label(const LabelMap& lbl);
Image resize_bilinear_image(const Image& img, int out_h, int out_w);
LabelMap resize_nearest_label(const LabelMap& lbl, int out_h, int out_w);

// Random rescale, crop (ignore-padded when short), horizontal flip. The rng
// draw order is fixed, so identity settings reproduce the input bitwise.
Sample weak_augment(const Sample& s, const WeakAugSpec& spec, Rng& rng);

// Photometric-only stack: color jitter, grayscale, gaussian blur. Never moves
// a pixel, which keeps strong views aligned with weak-view pseudo-labels.
Image strong_augment(const Image& img, const StrongAugSpec& spec, Rng& rng);

// Box with the requested area fraction, uniform position, mild aspect jitter.
CutMixBox sample_cutmix_box(int height, int width, double area_min, double area_max, Rng& rng);

template <typename T>
struct CutMixResult {
  Tensor<T> images;        // {N, 3, H, W}
  LabelMap pseudo_labels;  // {N, H, W}
  Tensor<T> masks;         // {N, H, W}
};

// Per image, with probability prob, pastes a box from the batch-rolled
// partner into image, pseudo-label and confidence mask at once. All three are
// mixed with the identical box so they never disagree about provenance.
template <typename T>
CutMixResult<T> cutmix_pair(const Tensor<T>& images, const LabelMap& pseudo_labels,
                            const Tensor<T>& masks, double prob, double area_min,
                            double area_max, Rng& rng) {
  if (images.rank() != 4 || pseudo_labels.rank() != 3 || masks.rank() != 3)
    throw ContractError("cutmix_pair: expected batched inputs");
  const int n = images.dim(0);
  const int h = images.dim(2);
  const int w = images.dim(3);
  if (pseudo_labels.dim(0) != n || pseudo_labels.dim(1) != h || pseudo_labels.dim(2) != w ||
      masks.dim(0) != n || masks.dim(1) != h || masks.dim(2) != w)
    throw ContractError("cutmix_pair: images, pseudo-labels and masks must be aligned");
  if (n < 2 && prob > 0.0)
    throw ConfigError("cutmix_pair: batch size must be >= 2 when prob > 0");

  CutMixResult<T> out{images, pseudo_labels, masks};
  for (int i = 0; i < n; ++i) {
    const bool apply = rng.bernoulli(prob);
    const CutMixBox box = sample_cutmix_box(h, w, area_min, area_max, rng);
    if (!apply) continue;
    const int j = (i + 1) % n;
    for (int y = box.top; y < box.top + box.height; ++y) {
      for (int x = box.left; x < box.left + box.width; ++x) {
        for (int c = 0; c < images.dim(1); ++c) out.images.at(i, c, y, x) = images.at(j, c, y, x);
        out.pseudo_labels[(static_cast<std::int64_t>(i) * h + y) * w + x] =
            pseudo_labels[(static_cast<std::int64_t>(j) * h + y) * w + x];
        out.masks[(static_cast<std::int64_t>(i) * h + y) * w + x] =
            masks[(static_cast<std::int64_t>(j) * h + y) * w + x];
      }
    }
  }
  return out;
}

// Channel-wise dropout on encoder features {N, D, H, W}: a channel is either
// zeroed or scaled by 1/(1-rate). When scale_out is given it receives the
// per-(sample, channel) factors, which is all backward needs.
template <typename T>
Tensor<T> feature_dropout(const Tensor<T>& features, double rate, Rng& rng,
                          Tensor<T>* scale_out = nullptr) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("feature_dropout: rate must be in [0, 1)");
  if (features.rank() != 4) throw ContractError("feature_dropout: expected {N, D, H, W}");
  const int n = features.dim(0);
  const int d = features.dim(1);
  const std::int64_t plane = static_cast<std::int64_t>(features.dim(2)) * features.dim(3);

  Tensor<T> scales({n, d}, T(1));
  if (rate > 0.0) {
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < d; ++c)
        scales[static_cast<std::int64_t>(i) * d + c] = rng.bernoulli(rate) ? T(0) : keep_scale;
  }

  Tensor<T> out(features.shape());
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < d; ++c) {
      const T s = scales[static_cast<std::int64_t>(i) * d + c];
      const std::int64_t base = (static_cast<std::int64_t>(i) * d + c) * plane;
      for (std::int64_t p = 0; p < plane; ++p) out[base + p] = features[base + p] * s;
    }
  }
  if (scale_out) *scale_out = std::move(scales);
  return out;
}

}  // namespace mlpmatch::augment
