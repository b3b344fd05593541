#include "mlpmatch/augment/augment.hpp"

#include <algorithm>
#include <cmath>

namespace mlpmatch::augment {
namespace {

using dataset::kIgnoreLabel;

float luminance(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

void clamp01(Image& img) {
  for (auto& v : img) v = std::clamp(v, 0.0f, 1.0f);
}

void apply_brightness(Image& img, float f) {
  for (auto& v : img) v *= f;
  clamp01(img);
}

void apply_contrast(Image& img, float f) {
  const int h = img.dim(1), w = img.dim(2);
  double acc = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      acc += luminance(img.at3(0, y, x), img.at3(1, y, x), img.at3(2, y, x));
  const float mean = static_cast<float>(acc / (static_cast<double>(h) * w));
  for (auto& v : img) v = f * v + (1.0f - f) * mean;
  clamp01(img);
}

void apply_saturation(Image& img, float f) {
  const int h = img.dim(1), w = img.dim(2);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float g = luminance(img.at3(0, y, x), img.at3(1, y, x), img.at3(2, y, x));
      for (int c = 0; c < 3; ++c) img.at3(c, y, x) = f * img.at3(c, y, x) + (1.0f - f) * g;
    }
  }
  clamp01(img);
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  v = mx;
  const float d = mx - mn;
  s = mx > 0.0f ? d / mx : 0.0f;
  if (d <= 0.0f) {
    h = 0.0f;
    return;
  }
  if (mx == r)
    h = (g - b) / d + (g < b ? 6.0f : 0.0f);
  else if (mx == g)
    h = (b - r) / d + 2.0f;
  else
    h = (r - g) / d + 4.0f;
  h /= 6.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  h = h - std::floor(h);
  const int i = static_cast<int>(h * 6.0f) % 6;
  const float f = h * 6.0f - std::floor(h * 6.0f);
  const float p = v * (1.0f - s);
  const float q = v * (1.0f - f * s);
  const float t = v * (1.0f - (1.0f - f) * s);
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

void apply_hue(Image& img, float delta) {
  const int h = img.dim(1), w = img.dim(2);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float hh, ss, vv;
      rgb_to_hsv(img.at3(0, y, x), img.at3(1, y, x), img.at3(2, y, x), hh, ss, vv);
      hsv_to_rgb(hh + delta, ss, vv, img.at3(0, y, x), img.at3(1, y, x), img.at3(2, y, x));
    }
  }
  clamp01(img);
}

void apply_grayscale(Image& img) {
  const int h = img.dim(1), w = img.dim(2);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float g = luminance(img.at3(0, y, x), img.at3(1, y, x), img.at3(2, y, x));
      for (int c = 0; c < 3; ++c) img.at3(c, y, x) = g;
    }
  }
}

void apply_gaussian_blur(Image& img, float sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(2.5f * sigma)));
  std::vector<float> kernel(static_cast<std::size_t>(2 * radius + 1));
  float sum = 0.0f;
  for (int i = -radius; i <= radius; ++i) {
    const float v = std::exp(-0.5f * static_cast<float>(i * i) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (auto& v : kernel) v /= sum;

  const int h = img.dim(1), w = img.dim(2);
  Image tmp({3, h, w});
  // Horizontal pass with replicated borders, then vertical.
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 img.at3(c, y, std::clamp(x + i, 0, w - 1));
        tmp.at3(c, y, x) = acc;
      }
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 tmp.at3(c, std::clamp(y + i, 0, h - 1), x);
        img.at3(c, y, x) = acc;
      }
}

}  // namespace

Image hflip_image(const Image& img) {
  const int h = img.dim(1), w = img.dim(2);
  Image out({3, h, w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at3(c, y, x) = img.at3(c, y, w - 1 - x);
  return out;
}

LabelMap hflip_label(const LabelMap& lbl) {
  const int h = lbl.dim(0), w = lbl.dim(1);
  LabelMap out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at2(y, x) = lbl.at2(y, w - 1 - x);
  return out;
}

Image resize_bilinear_image(const Image& img, int out_h, int out_w) {
  const int h = img.dim(1), w = img.dim(2);
  if (out_h == h && out_w == w) return img;
  Image out({3, out_h, out_w});
  const float sy = static_cast<float>(h) / static_cast<float>(out_h);
  const float sx = static_cast<float>(w) / static_cast<float>(out_w);
  for (int y = 0; y < out_h; ++y) {
    const float fy = std::clamp((y + 0.5f) * sy - 0.5f, 0.0f, static_cast<float>(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const float wy = fy - static_cast<float>(y0);
    for (int x = 0; x < out_w; ++x) {
      const float fx = std::clamp((x + 0.5f) * sx - 0.5f, 0.0f, static_cast<float>(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const float wx = fx - static_cast<float>(x0);
      for (int c = 0; c < 3; ++c) {
        const float top = img.at3(c, y0, x0) * (1.0f - wx) + img.at3(c, y0, x1) * wx;
        const float bot = img.at3(c, y1, x0) * (1.0f - wx) + img.at3(c, y1, x1) * wx;
        out.at3(c, y, x) = top * (1.0f - wy) + bot * wy;
      }
    }
  }
  return out;
}

LabelMap resize_nearest_label(const LabelMap& lbl, int out_h, int out_w) {
  const int h = lbl.dim(0), w = lbl.dim(1);
  if (out_h == h && out_w == w) return lbl;
  LabelMap out({out_h, out_w});
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::min(h - 1, static_cast<int>((y + 0.5f) * h / out_h));
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::min(w - 1, static_cast<int>((x + 0.5f) * w / out_w));
      out.at2(y, x) = lbl.at2(sy, sx);
    }
  }
  return out;
}

Sample weak_augment(const Sample& s, const WeakAugSpec& spec, Rng& rng) {
  if (spec.scale_min <= 0.0 || spec.scale_max < spec.scale_min)
    throw ConfigError("weak_augment: scale_range must be positive and ordered");
  if (spec.crop_size < 1) throw ConfigError("weak_augment: crop_size must be >= 1");

  const double scale = rng.uniform(spec.scale_min, spec.scale_max);
  const int h = s.height(), w = s.width();
  const int nh = std::max(1, static_cast<int>(std::lround(h * scale)));
  const int nw = std::max(1, static_cast<int>(std::lround(w * scale)));

  Sample out;
  out.id = s.id;
  out.image = resize_bilinear_image(s.image, nh, nw);
  if (s.label) out.label = resize_nearest_label(*s.label, nh, nw);

  // Pad bottom/right up to the crop size: zeros for the image, ignore for the
  // label so padded pixels never reach losses or metrics.
  const int ph = std::max(nh, spec.crop_size);
  const int pw = std::max(nw, spec.crop_size);
  if (ph != nh || pw != nw) {
    Image padded({3, ph, pw}, 0.0f);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < nh; ++y)
        for (int x = 0; x < nw; ++x) padded.at3(c, y, x) = out.image.at3(c, y, x);
    out.image = std::move(padded);
    if (out.label) {
      LabelMap lp({ph, pw}, kIgnoreLabel);
      for (int y = 0; y < nh; ++y)
        for (int x = 0; x < nw; ++x) lp.at2(y, x) = out.label->at2(y, x);
      out.label = std::move(lp);
    }
  }

  const int y0 = rng.uniform_int(0, ph - spec.crop_size);
  const int x0 = rng.uniform_int(0, pw - spec.crop_size);
  if (ph != spec.crop_size || pw != spec.crop_size) {
    Image cropped({3, spec.crop_size, spec.crop_size});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < spec.crop_size; ++y)
        for (int x = 0; x < spec.crop_size; ++x)
          cropped.at3(c, y, x) = out.image.at3(c, y0 + y, x0 + x);
    out.image = std::move(cropped);
    if (out.label) {
      LabelMap lc({spec.crop_size, spec.crop_size});
      for (int y = 0; y < spec.crop_size; ++y)
        for (int x = 0; x < spec.crop_size; ++x) lc.at2(y, x) = out.label->at2(y0 + y, x0 + x);
      out.label = std::move(lc);
    }
  }

  if (rng.bernoulli(spec.hflip_prob)) {
    out.image = hflip_image(out.image);
    if (out.label) out.label = hflip_label(*out.label);
  }
  return out;
}

Image strong_augment(const Image& img, const StrongAugSpec& spec, Rng& rng) {
  Image out = img;
  if (rng.bernoulli(spec.color_jitter_prob)) {
    const auto& st = spec.jitter_strengths;
    // Factors first, then a shuffled application order (both always drawn so
    // the stream stays aligned across calls).
    const float fb = static_cast<float>(rng.uniform(std::max(0.0, 1.0 - st[0]), 1.0 + st[0]));
    const float fc = static_cast<float>(rng.uniform(std::max(0.0, 1.0 - st[1]), 1.0 + st[1]));
    const float fs = static_cast<float>(rng.uniform(std::max(0.0, 1.0 - st[2]), 1.0 + st[2]));
    const float fh = static_cast<float>(rng.uniform(-st[3], st[3]));
    int order[4] = {0, 1, 2, 3};
    for (int i = 3; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
    for (int op : order) {
      switch (op) {
        case 0: apply_brightness(out, fb); break;
        case 1: apply_contrast(out, fc); break;
        case 2: apply_saturation(out, fs); break;
        default: apply_hue(out, fh); break;
      }
    }
  }
  if (rng.bernoulli(spec.grayscale_prob)) apply_grayscale(out);
  if (rng.bernoulli(spec.blur_prob))
    apply_gaussian_blur(out, static_cast<float>(rng.uniform(0.1, 2.0)));
  return out;
}

CutMixBox sample_cutmix_box(int height, int width, double area_min, double area_max, Rng& rng) {
  if (area_min <= 0.0 || area_max < area_min || area_max > 1.0)
    throw ConfigError("cutmix: area fraction range invalid");
  const double frac = rng.uniform(area_min, area_max);
  const double aspect = rng.uniform(0.75, 1.3333);
  const double target = frac * height * width;
  int bw = std::clamp(static_cast<int>(std::lround(std::sqrt(target * aspect))), 1, width);
  int bh = std::clamp(static_cast<int>(std::lround(target / bw)), 1, height);
  CutMixBox box;
  box.height = bh;
  box.width = bw;
  box.top = rng.uniform_int(0, height - bh);
  box.left = rng.uniform_int(0, width - bw);
  return box;
}

}  // namespace mlpmatch::augment
