#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mlpmatch/core/tensor.hpp"

namespace mlpmatch::dataset {

// Label value for pixels excluded from losses and metrics (VOC convention).
constexpr std::int32_t kIgnoreLabel = 255;

using Image = Tensor<float>;         // {3, H, W}, values in [0, 1]
using LabelMap = Tensor<std::int32_t>;  // {H, W}, class ids or kIgnoreLabel

struct Sample {
  Image image;
  std::optional<LabelMap> label;
  std::string id;

  int height() const { return image.dim(1); }
  int width() const { return image.dim(2); }
};

// Throws ContractError if the sample violates its invariants.
void validate_sample(const Sample& s, int num_classes);

struct SplitSpec {
  std::vector<std::string> labeled_ids;
  std::vector<std::string> unlabeled_ids;
  int num_classes = 0;
};

// Throws ConfigError on invalid or overlapping splits.
void validate_split(const SplitSpec& split);

struct SyntheticSpec {
  int image_size = 64;
  int num_classes = 4;  // class 0 is background
  int shapes_min = 1;
  int shapes_max = 3;
  std::uint64_t seed = 0;
};

}  // namespace mlpmatch::dataset

namespace mlpmatch {
// The sample vocabulary is used across every module; promote it.
using dataset::Image;
using dataset::kIgnoreLabel;
using dataset::LabelMap;
using dataset::Sample;
using dataset::SplitSpec;
}  // namespace mlpmatch

