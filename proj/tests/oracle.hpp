// Independent reference implementations used only by tests. Deliberately
// written in the most direct way possible so they share no code (and no
// mistakes) with the library under test.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "mlpmatch/core/tensor.hpp"

namespace oracle {

// Direct convolution, NCHW, weight {out_c, in_c*k*k}, zero padding.
template <typename T>
mlpmatch::Tensor<T> conv2d(const mlpmatch::Tensor<T>& x, const mlpmatch::Tensor<T>& weight,
                           const T* bias, int out_c, int k, int stride, int dilation, int pad) {
  const int n = x.dim(0), in_c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = (h + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
  const int ow = (w + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
  mlpmatch::Tensor<T> y({n, out_c, oh, ow});
  for (int i = 0; i < n; ++i)
    for (int oc = 0; oc < out_c; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias ? static_cast<double>(bias[oc]) : 0.0;
          for (int ic = 0; ic < in_c; ++ic)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride - pad + ky * dilation;
                const int ix = ox * stride - pad + kx * dilation;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += static_cast<double>(x.at(i, ic, iy, ix)) *
                       static_cast<double>(weight[(static_cast<std::int64_t>(oc) * in_c + ic) * k * k +
                                                  ky * k + kx]);
              }
          y.at(i, oc, oy, ox) = static_cast<T>(acc);
        }
  return y;
}

// Cross-entropy against integer targets with ignore index, optional mask;
// denominator counts non-ignored pixels. Long-double accumulation.
inline double cross_entropy(const mlpmatch::Tensor<double>& logits,
                            const mlpmatch::Tensor<std::int32_t>& targets,
                            const mlpmatch::Tensor<double>* mask, int ignore_index) {
  const int n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  long double sum = 0.0L;
  std::int64_t valid = 0;
  for (int i = 0; i < n; ++i)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::int32_t t = targets[(static_cast<std::int64_t>(i) * h + y) * w + x];
        if (t == ignore_index) continue;
        ++valid;
        long double denom = 0.0L;
        for (int k = 0; k < c; ++k) denom += expl(static_cast<long double>(logits.at(i, k, y, x)));
        long double p = expl(static_cast<long double>(logits.at(i, t, y, x))) / denom;
        long double term = -logl(p);
        if (mask) term *= static_cast<long double>((*mask)[(static_cast<std::int64_t>(i) * h + y) * w + x]);
        sum += term;
      }
  if (valid == 0) return 0.0;
  return static_cast<double>(sum / static_cast<long double>(valid));
}

// Central finite difference of a scalar function at x.
inline double central_diff(const std::function<double(double)>& f, double x, double eps) {
  return (f(x + eps) - f(x - eps)) / (2.0 * eps);
}

// Confusion-matrix mIoU done the slow, obvious way.
inline double miou(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& truth,
                   int num_classes, int ignore_index) {
  std::vector<std::int64_t> inter(num_classes, 0), pred_n(num_classes, 0), truth_n(num_classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (truth[i] == ignore_index) continue;
    pred_n[static_cast<std::size_t>(pred[i])]++;
    truth_n[static_cast<std::size_t>(truth[i])]++;
    if (pred[i] == truth[i]) inter[static_cast<std::size_t>(pred[i])]++;
  }
  double sum = 0.0;
  int counted = 0;
  for (int k = 0; k < num_classes; ++k) {
    const std::int64_t uni = pred_n[static_cast<std::size_t>(k)] + truth_n[static_cast<std::size_t>(k)] -
                             inter[static_cast<std::size_t>(k)];
    if (uni == 0) continue;  // class absent from both prediction and truth
    sum += static_cast<double>(inter[static_cast<std::size_t>(k)]) / static_cast<double>(uni);
    ++counted;
  }
  return counted > 0 ? sum / counted : 0.0;
}

}  // namespace oracle
