#pragma once

#include <string>
#include <vector>

#include "mlpmatch/model/layers.hpp"

namespace mlpmatch::model {

enum class BlockMode { kActive, kSkip };

// Residual bottleneck (1x1 reduce -> 3x3 -> 1x1 expand, BN after each conv)
// whose whole residual branch can be bypassed at runtime. In SKIP mode only
// the shortcut runs: an identity shortcut passes the input through unchanged,
// a projection shortcut still applies conv+BN (and optionally the merge ReLU,
// controlled by relu_on_projection_skip).
template <typename T>
class PerturbableBottleneck {
 public:
  PerturbableBottleneck() = default;
  PerturbableBottleneck(int in_c, int mid_c, int out_c, int stride, int dilation)
      : conv1(in_c, mid_c, 1),
        conv2(mid_c, mid_c, 3, stride, dilation),
        conv3(mid_c, out_c, 1),
        bn1(mid_c),
        bn2(mid_c),
        bn3(out_c),
        projection_(in_c != out_c || stride != 1) {
    if (projection_) {
      conv_p = Conv2d<T>(in_c, out_c, 1, stride);
      bn_p = BatchNorm2d<T>(out_c);
    }
  }

  void init(Rng& rng) {
    conv1.init(rng);
    conv2.init(rng);
    conv3.init(rng);
    if (projection_) conv_p.init(rng);
  }

  bool has_projection() const { return projection_; }
  BlockMode mode() const { return mode_; }
  void set_mode(BlockMode m) { mode_ = m; }

  struct Ctx {
    typename Conv2d<T>::Ctx c1, c2, c3, cp;
    typename BatchNorm2d<T>::Ctx b1, b2, b3, bp;
    Tensor<T> relu1_out, relu2_out, out;
    bool skipped = false;
    bool out_relu = false;  // whether the final ReLU was applied
  };

  Tensor<T> forward(const Tensor<T>& x, Ctx* ctx, bool training, bool update_running,
                    bool relu_on_projection_skip) {
    Ctx local;
    Ctx& c = ctx ? *ctx : local;
    c.skipped = (mode_ == BlockMode::kSkip);

    if (c.skipped) {
      if (!projection_) {
        c.out_relu = false;
        c.out = x;
        return x;
      }
      Tensor<T> s = bn_p.forward(conv_p.forward(x, &c.cp), &c.bp, training, update_running);
      c.out_relu = relu_on_projection_skip;
      c.out = c.out_relu ? relu_forward(s) : std::move(s);
      return c.out;
    }

    Tensor<T> h = bn1.forward(conv1.forward(x, &c.c1), &c.b1, training, update_running);
    c.relu1_out = relu_forward(h);
    h = bn2.forward(conv2.forward(c.relu1_out, &c.c2), &c.b2, training, update_running);
    c.relu2_out = relu_forward(h);
    h = bn3.forward(conv3.forward(c.relu2_out, &c.c3), &c.b3, training, update_running);

    if (projection_) {
      Tensor<T> s = bn_p.forward(conv_p.forward(x, &c.cp), &c.bp, training, update_running);
      for (std::int64_t i = 0; i < h.size(); ++i) h[i] += s[i];
    } else {
      for (std::int64_t i = 0; i < h.size(); ++i) h[i] += x[i];
    }
    c.out_relu = true;
    c.out = relu_forward(h);
    return c.out;
  }

  Tensor<T> backward(const Ctx& c, const Tensor<T>& dy) {
    if (c.skipped) {
      if (!projection_) return dy;
      Tensor<T> d = c.out_relu ? relu_backward(c.out, dy) : dy;
      return conv_p.backward(c.cp, bn_p.backward(c.bp, d));
    }

    Tensor<T> d = relu_backward(c.out, dy);
    Tensor<T> dres = conv3.backward(c.c3, bn3.backward(c.b3, d));
    dres = relu_backward(c.relu2_out, dres);
    dres = conv2.backward(c.c2, bn2.backward(c.b2, dres));
    dres = relu_backward(c.relu1_out, dres);
    Tensor<T> dx = conv1.backward(c.c1, bn1.backward(c.b1, dres));

    if (projection_) {
      Tensor<T> ds = conv_p.backward(c.cp, bn_p.backward(c.bp, d));
      for (std::int64_t i = 0; i < dx.size(); ++i) dx[i] += ds[i];
    } else {
      for (std::int64_t i = 0; i < dx.size(); ++i) dx[i] += d[i];
    }
    return dx;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    conv1.collect_params(prefix + ".conv1", false, out);
    bn1.collect_params(prefix + ".bn1", false, out);
    conv2.collect_params(prefix + ".conv2", false, out);
    bn2.collect_params(prefix + ".bn2", false, out);
    conv3.collect_params(prefix + ".conv3", false, out);
    bn3.collect_params(prefix + ".bn3", false, out);
    if (projection_) {
      conv_p.collect_params(prefix + ".proj.conv", false, out);
      bn_p.collect_params(prefix + ".proj.bn", false, out);
    }
  }

  void collect_buffers(const std::string& prefix, std::vector<BufferRef<T>>& out) {
    bn1.collect_buffers(prefix + ".bn1", out);
    bn2.collect_buffers(prefix + ".bn2", out);
    bn3.collect_buffers(prefix + ".bn3", out);
    if (projection_) bn_p.collect_buffers(prefix + ".proj.bn", out);
  }

  Conv2d<T> conv1, conv2, conv3, conv_p;
  BatchNorm2d<T> bn1, bn2, bn3, bn_p;

 private:
  bool projection_ = false;
  BlockMode mode_ = BlockMode::kActive;
};

}  // namespace mlpmatch::model
