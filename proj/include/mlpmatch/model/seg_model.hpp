#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "mlpmatch/augment/augment.hpp"
#include "mlpmatch/model/bottleneck.hpp"

namespace mlpmatch::model {

// Identifies one bottleneck: stage in [0,4), block index within the stage.
struct BlockId {
  int stage = 0;
  int block = 0;
  friend bool operator==(const BlockId& a, const BlockId& b) {
    return a.stage == b.stage && a.block == b.block;
  }
};

inline std::string format_block_id(const BlockId& id) {
  return "s" + std::to_string(id.stage + 1) + "b" + std::to_string(id.block);
}

// Controls network perturbation: how many eligible blocks get skipped per
// forward and how the stage of each skipped block is sampled.
struct PerturbationPolicy {
  bool enabled = true;
  int max_skipped = 1;
  std::array<double, 4> stage_weights = {1.0, 1.0, 1.0, 1.0};
};

struct ModelSpec {
  int num_classes = 2;
  double width_multiplier = 1.0;
  std::array<int, 4> depths = {2, 2, 2, 2};
  bool relu_on_projection_skip = true;
};

// Encoder-decoder segmentation network. The encoder is a strided stem plus
// four bottleneck stages (stage 2 strided, stages 3-4 dilated), output stride
// 4; the decoder is a dilated 3x3 conv head and a 1x1 classifier followed by
// bilinear upsampling back to input resolution. Any bottleneck can be put in
// SKIP mode, which is how the perturbed sub-network is realized.
template <typename T>
class PerturbableSegModel {
 public:
  PerturbableSegModel() = default;

  explicit PerturbableSegModel(const ModelSpec& spec) : spec_(spec) {
    if (spec.num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
    if (spec.width_multiplier <= 0.0) throw ConfigError("model: width_multiplier must be > 0");
    for (int d : spec.depths)
      if (d < 1) throw ConfigError("model: every stage needs at least one block");

    const std::array<int, 4> base_out = {16, 32, 48, 64};
    std::array<int, 4> out{}, mid{};
    for (int s = 0; s < 4; ++s) {
      out[s] = scaled_width(base_out[s]);
      mid[s] = std::max(2, out[s] / 2);
    }
    const int stem_c = out[0];
    const int dec_c = scaled_width(48);

    stem_conv_ = Conv2d<T>(3, stem_c, 3, /*stride=*/2);
    stem_bn_ = BatchNorm2d<T>(stem_c);

    const std::array<int, 4> strides = {1, 2, 1, 1};
    const std::array<int, 4> dilations = {1, 1, 2, 4};
    int in_c = stem_c;
    for (int s = 0; s < 4; ++s) {
      for (int b = 0; b < spec.depths[s]; ++b) {
        const int stride = (b == 0) ? strides[s] : 1;
        stages_[s].emplace_back(in_c, mid[s], out[s], stride, dilations[s]);
        in_c = out[s];
        eligible_.push_back({s, b});
      }
    }
    feat_c_ = out[3];

    dec_conv_ = Conv2d<T>(feat_c_, dec_c, 3, /*stride=*/1, /*dilation=*/2);
    dec_bn_ = BatchNorm2d<T>(dec_c);
    cls_conv_ = Conv2d<T>(dec_c, spec.num_classes, 1, 1, 1, /*bias=*/true);
  }

  void init_params(Rng& rng) {
    stem_conv_.init(rng);
    for (auto& stage : stages_)
      for (auto& block : stage) block.init(rng);
    dec_conv_.init(rng);
    cls_conv_.init(rng);
  }

  struct ForwardOptions {
    bool training = false;
    bool update_running = true;               // BN running-stat EMA (training only)
    const PerturbationPolicy* perturb = nullptr;  // skip sampled blocks
    double feature_dropout_rate = -1.0;       // < 0 disables channel dropout
    Rng* rng = nullptr;                       // needed for perturb / dropout
  };

  struct ForwardCtx {
    typename Conv2d<T>::Ctx stem_c;
    typename BatchNorm2d<T>::Ctx stem_b;
    Tensor<T> stem_relu;
    std::array<std::vector<typename PerturbableBottleneck<T>::Ctx>, 4> blocks;
    Tensor<T> fp_scale;  // {N, feat_c} channel keep/boost factors, empty if unused
    typename Conv2d<T>::Ctx dec_c;
    typename BatchNorm2d<T>::Ctx dec_b;
    Tensor<T> dec_relu;
    typename Conv2d<T>::Ctx cls_c;
    int in_h = 0, in_w = 0, feat_h = 0, feat_w = 0;
  };

  // Returns logits {N, num_classes, H, W} at input resolution. When ctx is
  // given, every intermediate needed for backward() is cached in it. RNG draw
  // order: skip-block choices first (one stage draw + one block draw each),
  // then the dropout mask.
  Tensor<T> forward(const Tensor<T>& images, const ForwardOptions& opt, ForwardCtx* ctx = nullptr,
                    std::vector<BlockId>* chosen = nullptr) {
    if (images.rank() != 4 || images.dim(1) != 3)
      throw ContractError("model: expected images of shape {N,3,H,W}");
    if (opt.perturb && !opt.perturb->enabled)
      throw ContractError("model: perturbed forward requested with a disabled policy");
    if (opt.perturb && opt.feature_dropout_rate >= 0.0)
      throw ConfigError("model: network perturbation and feature dropout cannot be combined in one forward");
    if ((opt.perturb || opt.feature_dropout_rate >= 0.0) && !opt.rng)
      throw ConfigError("model: perturbed forward requires an rng");

    std::vector<BlockId> skipped;
    if (opt.perturb) {
      skipped = sample_skip_set(*opt.perturb, *opt.rng);
      for (const auto& id : skipped) stages_[id.stage][id.block].set_mode(BlockMode::kSkip);
      if (chosen) *chosen = skipped;
    } else if (chosen) {
      chosen->clear();
    }

    ForwardCtx local;
    ForwardCtx& c = ctx ? *ctx : local;
    c.in_h = images.dim(2);
    c.in_w = images.dim(3);

    Tensor<T> h = stem_bn_.forward(stem_conv_.forward(images, &c.stem_c), &c.stem_b, opt.training,
                                   opt.update_running);
    c.stem_relu = relu_forward(h);
    h = c.stem_relu;

    for (int s = 0; s < 4; ++s) {
      c.blocks[s].resize(stages_[s].size());
      for (std::size_t b = 0; b < stages_[s].size(); ++b)
        h = stages_[s][b].forward(h, &c.blocks[s][b], opt.training, opt.update_running,
                                  spec_.relu_on_projection_skip);
    }
    // Restore the modes this call changed before anything can throw later.
    for (const auto& id : skipped) stages_[id.stage][id.block].set_mode(BlockMode::kActive);

    c.feat_h = h.dim(2);
    c.feat_w = h.dim(3);

    if (opt.feature_dropout_rate >= 0.0)
      h = augment::feature_dropout(h, opt.feature_dropout_rate, *opt.rng, &c.fp_scale);
    else
      c.fp_scale = Tensor<T>();

    h = dec_bn_.forward(dec_conv_.forward(h, &c.dec_c), &c.dec_b, opt.training, opt.update_running);
    c.dec_relu = relu_forward(h);
    h = cls_conv_.forward(c.dec_relu, &c.cls_c);
    return upsample_bilinear(h, c.in_h, c.in_w);
  }

  // Accumulates parameter gradients for the cached forward; the block modes
  // in effect then are replayed from the ctx, not from current state.
  void backward(const ForwardCtx& c, const Tensor<T>& dlogits) {
    Tensor<T> d = upsample_bilinear_backward(dlogits, c.feat_h, c.feat_w);
    d = cls_conv_.backward(c.cls_c, d);
    d = relu_backward(c.dec_relu, d);
    d = dec_conv_.backward(c.dec_c, dec_bn_.backward(c.dec_b, d));

    if (c.fp_scale.size() > 0) {
      const int n = d.dim(0), ch = d.dim(1);
      const std::int64_t plane = static_cast<std::int64_t>(d.dim(2)) * d.dim(3);
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < ch; ++k) {
          const T s = c.fp_scale[static_cast<std::int64_t>(i) * ch + k];
          T* p = d.data() + (static_cast<std::int64_t>(i) * ch + k) * plane;
          for (std::int64_t j = 0; j < plane; ++j) p[j] *= s;
        }
    }

    for (int s = 3; s >= 0; --s)
      for (int b = static_cast<int>(stages_[s].size()) - 1; b >= 0; --b)
        d = stages_[s][b].backward(c.blocks[s][b], d);

    d = relu_backward(c.stem_relu, d);
    stem_conv_.backward(c.stem_c, stem_bn_.backward(c.stem_b, d));
  }

  // Eval-mode class probabilities {N, num_classes, H, W}; softmax over the
  // class axis with the usual max-shift for stability.
  Tensor<T> predict_probs(const Tensor<T>& images) {
    ForwardOptions opt;
    opt.training = false;
    opt.update_running = false;
    Tensor<T> logits = forward(images, opt);
    const int n = logits.dim(0), cls = logits.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(logits.dim(2)) * logits.dim(3);
    Tensor<T> probs(logits.shape());
    for (int i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < plane; ++j) {
        T mx = logits[(static_cast<std::int64_t>(i) * cls) * plane + j];
        for (int k = 1; k < cls; ++k)
          mx = std::max(mx, logits[(static_cast<std::int64_t>(i) * cls + k) * plane + j]);
        T denom = T(0);
        for (int k = 0; k < cls; ++k) {
          const T e = std::exp(logits[(static_cast<std::int64_t>(i) * cls + k) * plane + j] - mx);
          probs[(static_cast<std::int64_t>(i) * cls + k) * plane + j] = e;
          denom += e;
        }
        for (int k = 0; k < cls; ++k)
          probs[(static_cast<std::int64_t>(i) * cls + k) * plane + j] /= denom;
      }
    }
    return probs;
  }

  std::vector<ParamRef<T>> params() {
    std::vector<ParamRef<T>> out;
    stem_conv_.collect_params("encoder.stem.conv", false, out);
    stem_bn_.collect_params("encoder.stem.bn", false, out);
    for (int s = 0; s < 4; ++s)
      for (std::size_t b = 0; b < stages_[s].size(); ++b)
        stages_[s][b].collect_params(
            "encoder.s" + std::to_string(s + 1) + ".b" + std::to_string(b), out);
    dec_conv_.collect_params("decoder.conv", true, out);
    dec_bn_.collect_params("decoder.bn", true, out);
    cls_conv_.collect_params("decoder.cls", true, out);
    return out;
  }

  std::vector<BufferRef<T>> buffers() {
    std::vector<BufferRef<T>> out;
    stem_bn_.collect_buffers("encoder.stem.bn", out);
    for (int s = 0; s < 4; ++s)
      for (std::size_t b = 0; b < stages_[s].size(); ++b)
        stages_[s][b].collect_buffers(
            "encoder.s" + std::to_string(s + 1) + ".b" + std::to_string(b), out);
    dec_bn_.collect_buffers("decoder.bn", out);
    return out;
  }

  void zero_grad() {
    for (auto& p : params()) p.grad->fill(T(0));
  }

  std::int64_t param_count() {
    std::int64_t total = 0;
    for (auto& p : params()) total += p.value->size();
    return total;
  }

  const std::vector<BlockId>& eligible_blocks() const { return eligible_; }

  void set_eligible_blocks(std::vector<BlockId> blocks) {
    for (const auto& id : blocks) {
      if (id.stage < 0 || id.stage >= 4 || id.block < 0 ||
          id.block >= static_cast<int>(stages_[id.stage].size()))
        throw ConfigError("model: eligible block " + format_block_id(id) + " does not exist");
    }
    eligible_ = std::move(blocks);
  }

  // Restricts the eligible set to whole stages (1-based stage numbers).
  void set_eligible_stages(const std::vector<int>& stage_numbers) {
    std::vector<BlockId> blocks;
    for (int sn : stage_numbers) {
      if (sn < 1 || sn > 4) throw ConfigError("model: stage numbers run 1..4");
      for (int b = 0; b < static_cast<int>(stages_[sn - 1].size()); ++b)
        blocks.push_back({sn - 1, b});
    }
    eligible_ = std::move(blocks);
  }

  PerturbableBottleneck<T>& block(int stage, int index) { return stages_[stage][index]; }
  int stage_depth(int stage) const { return static_cast<int>(stages_[stage].size()); }

  bool all_modes_active() const {
    for (const auto& stage : stages_)
      for (const auto& block : stage)
        if (block.mode() != BlockMode::kActive) return false;
    return true;
  }

  int num_classes() const { return spec_.num_classes; }
  int feature_channels() const { return feat_c_; }
  const ModelSpec& spec() const { return spec_; }

  // Draws the skip set: stage by eligibility-masked stage weights, then a
  // uniform block within that stage, without replacement.
  std::vector<BlockId> sample_skip_set(const PerturbationPolicy& pol, Rng& rng) const {
    if (pol.max_skipped < 1) throw ConfigError("perturbation: max_skipped must be >= 1");
    double wsum = 0.0;
    for (double w : pol.stage_weights) {
      if (w < 0.0) throw ConfigError("perturbation: stage weights must be non-negative");
      wsum += w;
    }
    if (wsum <= 0.0) throw ConfigError("perturbation: stage weights must not all be zero");
    if (eligible_.empty()) throw ConfigError("perturbation: eligible block set is empty");

    std::array<std::vector<int>, 4> pool;
    for (const auto& id : eligible_) pool[id.stage].push_back(id.block);

    std::vector<BlockId> chosen;
    for (int pick = 0; pick < pol.max_skipped; ++pick) {
      double total = 0.0;
      for (int s = 0; s < 4; ++s)
        if (!pool[s].empty()) total += pol.stage_weights[s];
      if (total <= 0.0) break;  // nothing left to skip
      const double u = rng.uniform() * total;
      int stage = -1;
      double acc = 0.0;
      for (int s = 0; s < 4; ++s) {
        if (pool[s].empty()) continue;
        acc += pol.stage_weights[s];
        stage = s;
        if (u < acc) break;
      }
      const int slot = rng.uniform_int(0, static_cast<int>(pool[stage].size()) - 1);
      chosen.push_back({stage, pool[stage][static_cast<std::size_t>(slot)]});
      pool[stage].erase(pool[stage].begin() + slot);
    }
    return chosen;
  }

 private:
  int scaled_width(int base) const {
    return std::max(4, static_cast<int>(std::lround(base * spec_.width_multiplier)));
  }

  ModelSpec spec_;
  Conv2d<T> stem_conv_;
  BatchNorm2d<T> stem_bn_;
  std::array<std::vector<PerturbableBottleneck<T>>, 4> stages_;
  Conv2d<T> dec_conv_;
  BatchNorm2d<T> dec_bn_;
  Conv2d<T> cls_conv_;
  std::vector<BlockId> eligible_;
  int feat_c_ = 0;
};

template <typename T = float>
PerturbableSegModel<T> build_model(int num_classes, double width_multiplier = 1.0,
                                   std::array<int, 4> depths = {2, 2, 2, 2}) {
  ModelSpec spec;
  spec.num_classes = num_classes;
  spec.width_multiplier = width_multiplier;
  spec.depths = depths;
  return PerturbableSegModel<T>(spec);
}

}  // namespace mlpmatch::model
