#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mlpmatch/core/gemm.hpp"
#include "mlpmatch/core/rng.hpp"
#include "mlpmatch/core/tensor.hpp"

namespace mlpmatch::model {

// Named view of a learnable tensor, used for the optimizer, checkpoints and
// gradient tests. decoder_group selects the decoder learning-rate multiplier.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value = nullptr;
  Tensor<T>* grad = nullptr;
  bool decoder_group = false;
};

// Non-learnable state that still belongs in checkpoints (BN running stats).
template <typename T>
struct BufferRef {
  std::string name;
  Tensor<T>* value = nullptr;
};

inline int conv_out_dim(int in, int k, int stride, int dilation, int pad) {
  return (in + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
}

template <typename T>
void im2col(const T* x, int channels, int h, int w, int k, int stride, int dilation, int pad,
            int out_h, int out_w, T* col) {
  const std::int64_t plane = static_cast<std::int64_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col + ((static_cast<std::int64_t>(c) * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky * dilation;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < out_w; ++ox) dst[static_cast<std::int64_t>(oy) * out_w + ox] = T(0);
            continue;
          }
          const T* src = x + (static_cast<std::int64_t>(c) * h + iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx * dilation;
            dst[static_cast<std::int64_t>(oy) * out_w + ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_acc(const T* col, int channels, int h, int w, int k, int stride, int dilation,
                int pad, int out_h, int out_w, T* x) {
  const std::int64_t plane = static_cast<std::int64_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col + ((static_cast<std::int64_t>(c) * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky * dilation;
          if (iy < 0 || iy >= h) continue;
          T* dst = x + (static_cast<std::int64_t>(c) * h + iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx * dilation;
            if (ix >= 0 && ix < w) dst[ix] += src[static_cast<std::int64_t>(oy) * out_w + ox];
          }
        }
      }
    }
  }
}

// 2-D convolution with "same" padding for odd kernels. Weight layout is
// {out_c, in_c*k*k}; batches run one im2col + GEMM per image.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_c, int out_c, int k, int stride = 1, int dilation = 1, bool bias = false)
      : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), dilation_(dilation),
        pad_(dilation * (k - 1) / 2), has_bias_(bias) {
    weight = Tensor<T>({out_c, in_c * k * k});
    wgrad = Tensor<T>({out_c, in_c * k * k});
    if (has_bias_) {
      bias_v = Tensor<T>({out_c});
      bgrad = Tensor<T>({out_c});
    }
  }

  void init(Rng& rng) {
    const double std_dev = std::sqrt(2.0 / (static_cast<double>(in_c_) * k_ * k_));
    for (auto& v : weight) v = static_cast<T>(rng.normal() * std_dev);
    if (has_bias_) bias_v.fill(T(0));
  }

  struct Ctx {
    Tensor<T> input;  // kept for dW; cols are recomputed in backward
    int out_h = 0, out_w = 0;
  };

  Tensor<T> forward(const Tensor<T>& x, Ctx* ctx) const {
    if (x.rank() != 4 || x.dim(1) != in_c_) throw ContractError("Conv2d: bad input shape");
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int oh = conv_out_dim(h, k_, stride_, dilation_, pad_);
    const int ow = conv_out_dim(w, k_, stride_, dilation_, pad_);
    const int kk = in_c_ * k_ * k_;
    const std::int64_t plane = static_cast<std::int64_t>(oh) * ow;

    Tensor<T> y({n, out_c_, oh, ow});
    std::vector<T> col(static_cast<std::size_t>(kk) * plane);
    for (int i = 0; i < n; ++i) {
      im2col(x.data() + static_cast<std::int64_t>(i) * in_c_ * h * w, in_c_, h, w, k_, stride_,
             dilation_, pad_, oh, ow, col.data());
      gemm(out_c_, kk, static_cast<int>(plane), weight.data(), col.data(),
           y.data() + static_cast<std::int64_t>(i) * out_c_ * plane);
    }
    if (has_bias_) {
      for (int i = 0; i < n; ++i)
        for (int c = 0; c < out_c_; ++c) {
          T* dst = y.data() + (static_cast<std::int64_t>(i) * out_c_ + c) * plane;
          const T b = bias_v[c];
          for (std::int64_t p = 0; p < plane; ++p) dst[p] += b;
        }
    }
    if (ctx) {
      ctx->input = x;
      ctx->out_h = oh;
      ctx->out_w = ow;
    }
    return y;
  }

  Tensor<T> backward(const Ctx& ctx, const Tensor<T>& dy) {
    const Tensor<T>& x = ctx.input;
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int oh = ctx.out_h, ow = ctx.out_w;
    const int kk = in_c_ * k_ * k_;
    const std::int64_t plane = static_cast<std::int64_t>(oh) * ow;

    Tensor<T> dx(x.shape());
    std::vector<T> col(static_cast<std::size_t>(kk) * plane);
    std::vector<T> dcol(static_cast<std::size_t>(kk) * plane);
    for (int i = 0; i < n; ++i) {
      const T* xi = x.data() + static_cast<std::int64_t>(i) * in_c_ * h * w;
      const T* dyi = dy.data() + static_cast<std::int64_t>(i) * out_c_ * plane;
      im2col(xi, in_c_, h, w, k_, stride_, dilation_, pad_, oh, ow, col.data());
      // dW += dY * col^T
      gemm_bt_acc(out_c_, static_cast<int>(plane), kk, dyi, col.data(), wgrad.data());
      // dcol = W^T * dY
      gemm_at(kk, out_c_, static_cast<int>(plane), weight.data(), dyi, dcol.data());
      col2im_acc(dcol.data(), in_c_, h, w, k_, stride_, dilation_, pad_, oh, ow,
                 dx.data() + static_cast<std::int64_t>(i) * in_c_ * h * w);
      if (has_bias_) {
        for (int c = 0; c < out_c_; ++c) {
          T acc = T(0);
          const T* p = dyi + static_cast<std::int64_t>(c) * plane;
          for (std::int64_t j = 0; j < plane; ++j) acc += p[j];
          bgrad[c] += acc;
        }
      }
    }
    return dx;
  }

  void collect_params(const std::string& prefix, bool decoder, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".w", &weight, &wgrad, decoder});
    if (has_bias_) out.push_back({prefix + ".b", &bias_v, &bgrad, decoder});
  }

  std::int64_t param_count() const { return weight.size() + (has_bias_ ? bias_v.size() : 0); }
  int out_channels() const { return out_c_; }

  Tensor<T> weight, wgrad, bias_v, bgrad;

 private:
  int in_c_ = 0, out_c_ = 0, k_ = 1, stride_ = 1, dilation_ = 1, pad_ = 0;
  bool has_bias_ = false;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels) : channels_(channels) {
    gamma = Tensor<T>({channels}, T(1));
    beta = Tensor<T>({channels});
    ggrad = Tensor<T>({channels});
    bgrad = Tensor<T>({channels});
    running_mean = Tensor<T>({channels});
    running_var = Tensor<T>({channels}, T(1));
  }

  struct Ctx {
    Tensor<T> xhat;
    std::vector<T> invstd;
    bool training = false;
  };

  // In training mode normalizes with batch statistics; running stats are
  // EMA-updated only when update_running is set (finite-difference probes
  // must not mutate them).
  Tensor<T> forward(const Tensor<T>& x, Ctx* ctx, bool training, bool update_running) {
    if (x.rank() != 4 || x.dim(1) != channels_) throw ContractError("BatchNorm2d: bad input shape");
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const std::int64_t count = static_cast<std::int64_t>(n) * plane;

    std::vector<T> mean(static_cast<std::size_t>(channels_), T(0));
    std::vector<T> invstd(static_cast<std::size_t>(channels_), T(0));
    if (training) {
      for (int c = 0; c < channels_; ++c) {
        T acc = T(0);
        for (int i = 0; i < n; ++i) {
          const T* p = x.data() + (static_cast<std::int64_t>(i) * channels_ + c) * plane;
          for (std::int64_t j = 0; j < plane; ++j) acc += p[j];
        }
        mean[static_cast<std::size_t>(c)] = acc / static_cast<T>(count);
      }
      for (int c = 0; c < channels_; ++c) {
        T acc = T(0);
        const T m = mean[static_cast<std::size_t>(c)];
        for (int i = 0; i < n; ++i) {
          const T* p = x.data() + (static_cast<std::int64_t>(i) * channels_ + c) * plane;
          for (std::int64_t j = 0; j < plane; ++j) {
            const T d = p[j] - m;
            acc += d * d;
          }
        }
        const T var = acc / static_cast<T>(count);
        invstd[static_cast<std::size_t>(c)] = T(1) / std::sqrt(var + eps_);
        if (update_running) {
          const T unbiased = count > 1 ? acc / static_cast<T>(count - 1) : var;
          running_mean[c] = (T(1) - momentum_) * running_mean[c] + momentum_ * m;
          running_var[c] = (T(1) - momentum_) * running_var[c] + momentum_ * unbiased;
        }
      }
    } else {
      for (int c = 0; c < channels_; ++c) {
        mean[static_cast<std::size_t>(c)] = running_mean[c];
        invstd[static_cast<std::size_t>(c)] = T(1) / std::sqrt(running_var[c] + eps_);
      }
    }

    Tensor<T> y(x.shape());
    Tensor<T> xhat(x.shape());
    for (int c = 0; c < channels_; ++c) {
      const T m = mean[static_cast<std::size_t>(c)];
      const T is = invstd[static_cast<std::size_t>(c)];
      const T g = gamma[c], b = beta[c];
      for (int i = 0; i < n; ++i) {
        const std::int64_t base = (static_cast<std::int64_t>(i) * channels_ + c) * plane;
        for (std::int64_t j = 0; j < plane; ++j) {
          const T xh = (x[base + j] - m) * is;
          xhat[base + j] = xh;
          y[base + j] = g * xh + b;
        }
      }
    }
    if (ctx) {
      ctx->xhat = std::move(xhat);
      ctx->invstd = std::move(invstd);
      ctx->training = training;
    }
    return y;
  }

  Tensor<T> backward(const Ctx& ctx, const Tensor<T>& dy) {
    const Tensor<T>& xhat = ctx.xhat;
    const int n = dy.dim(0), h = dy.dim(2), w = dy.dim(3);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const std::int64_t count = static_cast<std::int64_t>(n) * plane;

    Tensor<T> dx(dy.shape());
    for (int c = 0; c < channels_; ++c) {
      T sum_dy = T(0), sum_dy_xhat = T(0);
      for (int i = 0; i < n; ++i) {
        const std::int64_t base = (static_cast<std::int64_t>(i) * channels_ + c) * plane;
        for (std::int64_t j = 0; j < plane; ++j) {
          sum_dy += dy[base + j];
          sum_dy_xhat += dy[base + j] * xhat[base + j];
        }
      }
      ggrad[c] += sum_dy_xhat;
      bgrad[c] += sum_dy;

      const T g = gamma[c];
      const T is = ctx.invstd[static_cast<std::size_t>(c)];
      if (ctx.training) {
        const T inv_count = T(1) / static_cast<T>(count);
        for (int i = 0; i < n; ++i) {
          const std::int64_t base = (static_cast<std::int64_t>(i) * channels_ + c) * plane;
          for (std::int64_t j = 0; j < plane; ++j)
            dx[base + j] = g * is *
                           (dy[base + j] - sum_dy * inv_count - xhat[base + j] * sum_dy_xhat * inv_count);
        }
      } else {
        for (int i = 0; i < n; ++i) {
          const std::int64_t base = (static_cast<std::int64_t>(i) * channels_ + c) * plane;
          for (std::int64_t j = 0; j < plane; ++j) dx[base + j] = g * is * dy[base + j];
        }
      }
    }
    return dx;
  }

  void collect_params(const std::string& prefix, bool decoder, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".gamma", &gamma, &ggrad, decoder});
    out.push_back({prefix + ".beta", &beta, &bgrad, decoder});
  }

  void collect_buffers(const std::string& prefix, std::vector<BufferRef<T>>& out) {
    out.push_back({prefix + ".running_mean", &running_mean});
    out.push_back({prefix + ".running_var", &running_var});
  }

  std::int64_t param_count() const { return gamma.size() + beta.size(); }

  Tensor<T> gamma, beta, ggrad, bgrad;
  Tensor<T> running_mean, running_var;

 private:
  int channels_ = 0;
  T eps_ = static_cast<T>(1e-5);
  T momentum_ = static_cast<T>(0.1);
};

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx(dy.shape());
  for (std::int64_t i = 0; i < dy.size(); ++i) dx[i] = y[i] > T(0) ? dy[i] : T(0);
  return dx;
}

// Bilinear interpolation to (out_h, out_w) on batched maps, half-pixel grid.
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, int out_h, int out_w) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_h == h && out_w == w) return x;
  Tensor<T> y({n, c, out_h, out_w});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    const double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const T wy = static_cast<T>(fy - y0);
    for (int ox = 0; ox < out_w; ++ox) {
      const double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const T wx = static_cast<T>(fx - x0);
      for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
          const std::int64_t base = (static_cast<std::int64_t>(i) * c + ch) * h;
          const T top = x[(base + y0) * w + x0] * (T(1) - wx) + x[(base + y0) * w + x1] * wx;
          const T bot = x[(base + y1) * w + x0] * (T(1) - wx) + x[(base + y1) * w + x1] * wx;
          y[((static_cast<std::int64_t>(i) * c + ch) * out_h + oy) * out_w + ox] =
              top * (T(1) - wy) + bot * wy;
        }
      }
    }
  }
  return y;
}

// Adjoint of upsample_bilinear: scatter-adds each output gradient onto the
// four source corners it was interpolated from.
template <typename T>
Tensor<T> upsample_bilinear_backward(const Tensor<T>& dy, int in_h, int in_w) {
  const int n = dy.dim(0), c = dy.dim(1), out_h = dy.dim(2), out_w = dy.dim(3);
  Tensor<T> dx({n, c, in_h, in_w});
  if (out_h == in_h && out_w == in_w) return dy;
  const double sy = static_cast<double>(in_h) / out_h;
  const double sx = static_cast<double>(in_w) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    const double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(in_h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, in_h - 1);
    const T wy = static_cast<T>(fy - y0);
    for (int ox = 0; ox < out_w; ++ox) {
      const double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(in_w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, in_w - 1);
      const T wx = static_cast<T>(fx - x0);
      for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
          const T g = dy[((static_cast<std::int64_t>(i) * c + ch) * out_h + oy) * out_w + ox];
          const std::int64_t base = (static_cast<std::int64_t>(i) * c + ch) * in_h;
          dx[(base + y0) * in_w + x0] += g * (T(1) - wy) * (T(1) - wx);
          dx[(base + y0) * in_w + x1] += g * (T(1) - wy) * wx;
          dx[(base + y1) * in_w + x0] += g * wy * (T(1) - wx);
          dx[(base + y1) * in_w + x1] += g * wy * wx;
        }
      }
    }
  }
  return dx;
}

}  // namespace mlpmatch::model
