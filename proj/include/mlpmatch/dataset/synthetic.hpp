#pragma once

#include <array>
#include <vector>

#include "mlpmatch/dataset/sample.hpp"

namespace mlpmatch::dataset {

// Base color of a synthetic class (class 0 is the background).
std::array<float, 3> class_base_color(int cls, int num_classes);

// Deterministic shape-segmentation set: each non-background class draws as a
// disc, rectangle or triangle with a class-specific color distribution plus
// per-image jitter and per-pixel noise. Sample i depends only on (seed, i),
// so generation is order-independent and safe to parallelize.
std::vector<Sample> generate_synthetic(const SyntheticSpec& spec, int count);

// Single sample of the stream above.
Sample generate_synthetic_sample(const SyntheticSpec& spec, int index);

}  // namespace mlpmatch::dataset
