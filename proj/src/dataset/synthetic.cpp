#include "mlpmatch/dataset/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "mlpmatch/core/rng.hpp"

namespace mlpmatch::dataset {
namespace {

void check_spec(const SyntheticSpec& spec) {
  if (spec.image_size < 8) throw ConfigError("synthetic: image_size must be >= 8");
  if (spec.num_classes < 2) throw ConfigError("synthetic: num_classes must be >= 2");
  if (spec.shapes_min < 1 || spec.shapes_max < spec.shapes_min)
    throw ConfigError("synthetic: shapes_per_image range invalid");
}

std::array<float, 3> hsv_to_rgb(float h, float s, float v) {
  h = h - std::floor(h);
  const float i = std::floor(h * 6.0f);
  const float f = h * 6.0f - i;
  const float p = v * (1.0f - s);
  const float q = v * (1.0f - f * s);
  const float t = v * (1.0f - (1.0f - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

struct Shape {
  int kind = 0;  // 0 disc, 1 rectangle, 2 triangle
  int cls = 1;
  float cx = 0, cy = 0, radius = 0, angle = 0;
  std::array<float, 3> color{};

  bool covers(float x, float y) const {
    const float dx = x - cx;
    const float dy = y - cy;
    if (kind == 0) return dx * dx + dy * dy <= radius * radius;
    // Rotate into the shape frame.
    const float ca = std::cos(angle), sa = std::sin(angle);
    const float u = ca * dx + sa * dy;
    const float v = -sa * dx + ca * dy;
    if (kind == 1) return std::abs(u) <= radius && std::abs(v) <= radius * 0.72f;
    // Upward triangle inscribed in the radius.
    const float top = -radius;
    const float bottom = radius * 0.8f;
    if (v < top || v > bottom) return false;
    const float half_width = radius * 1.0f * (v - top) / (bottom - top);
    return std::abs(u) <= half_width;
  }
};

}  // namespace

std::array<float, 3> class_base_color(int cls, int num_classes) {
  if (cls == 0) return {0.18f, 0.20f, 0.23f};
  // Golden-angle hue spacing keeps colors distinct for any class count.
  const float hue = std::fmod(0.11f + 0.381966f * static_cast<float>(cls - 1), 1.0f);
  (void)num_classes;
  return hsv_to_rgb(hue, 0.62f, 0.82f);
}

Sample generate_synthetic_sample(const SyntheticSpec& spec, int index) {
  check_spec(spec);
  Rng rng(mix64(spec.seed ^ mix64(static_cast<std::uint64_t>(index) + 0x5EEDULL)));
  const int n = spec.image_size;

  Sample s;
  s.id = "syn" + std::to_string(index);
  s.image = Image({3, n, n});
  s.label = LabelMap({n, n}, 0);

  // Background: base color, a gentle directional gradient, per-image jitter.
  const auto bg = class_base_color(0, spec.num_classes);
  const float gdir = static_cast<float>(rng.uniform(0.0, 2.0 * M_PI));
  const float gamp = static_cast<float>(rng.uniform(0.02, 0.07));
  const float bg_jitter = static_cast<float>(rng.uniform(-0.04, 0.04));
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const float g = gamp * ((x * std::cos(gdir) + y * std::sin(gdir)) / n);
      for (int c = 0; c < 3; ++c) s.image.at3(c, y, x) = bg[c] + bg_jitter + g;
    }
  }

  const int num_shapes = rng.uniform_int(spec.shapes_min, spec.shapes_max);
  for (int k = 0; k < num_shapes; ++k) {
    Shape sh;
    sh.cls = rng.uniform_int(1, spec.num_classes - 1);
    sh.kind = (sh.cls - 1) % 3;
    sh.cx = static_cast<float>(rng.uniform(0.22, 0.78)) * n;
    sh.cy = static_cast<float>(rng.uniform(0.22, 0.78)) * n;
    sh.radius = static_cast<float>(rng.uniform(0.16, 0.30)) * n;
    sh.angle = static_cast<float>(rng.uniform(0.0, 2.0 * M_PI));
    const auto base = class_base_color(sh.cls, spec.num_classes);
    for (int c = 0; c < 3; ++c)
      sh.color[c] = base[c] + static_cast<float>(rng.uniform(-0.07, 0.07));

    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        if (!sh.covers(x + 0.5f, y + 0.5f)) continue;
        s.label->at2(y, x) = sh.cls;
        for (int c = 0; c < 3; ++c) s.image.at3(c, y, x) = sh.color[c];
      }
    }
  }

  // Pixel noise, then clamp to the value range.
  for (std::int64_t i = 0; i < s.image.size(); ++i) {
    const float v = s.image[i] + 0.035f * static_cast<float>(rng.normal());
    s.image[i] = std::clamp(v, 0.0f, 1.0f);
  }
  return s;
}

std::vector<Sample> generate_synthetic(const SyntheticSpec& spec, int count) {
  check_spec(spec);
  if (count < 1) throw ConfigError("synthetic: count must be >= 1");
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(generate_synthetic_sample(spec, i));
  return out;
}

void validate_sample(const Sample& s, int num_classes) {
  if (s.image.rank() != 3 || s.image.dim(0) != 3)
    throw ContractError("sample " + s.id + ": image must be {3, H, W}");
  if (s.label) {
    if (s.label->rank() != 2 || s.label->dim(0) != s.image.dim(1) ||
        s.label->dim(1) != s.image.dim(2))
      throw ContractError("sample " + s.id + ": label/image spatial dims differ");
    for (std::int64_t i = 0; i < s.label->size(); ++i) {
      const std::int32_t v = (*s.label)[i];
      if (v != kIgnoreLabel && (v < 0 || v >= num_classes))
        throw ContractError("sample " + s.id + ": label value " + std::to_string(v) +
                            " outside {0.." + std::to_string(num_classes - 1) + ", 255}");
    }
  }
}

void validate_split(const SplitSpec& split) {
  if (split.num_classes < 2) throw ConfigError("split: num_classes must be >= 2");
  if (split.labeled_ids.empty()) throw ConfigError("split: need at least one labeled id");
  std::vector<std::string> a = split.labeled_ids;
  std::sort(a.begin(), a.end());
  for (const auto& id : split.unlabeled_ids)
    if (std::binary_search(a.begin(), a.end(), id))
      throw ConfigError("split: id '" + id + "' appears in both labeled and unlabeled lists");
}

}  // namespace mlpmatch::dataset
