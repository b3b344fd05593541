#pragma once

#include <array>
#include <string>
#include <vector>

#include "mlpmatch/dataset/sample.hpp"

namespace mlpmatch::io {

// Reads a segmentation mask PNG and returns the raw 8-bit values: palette
// indices for palette-indexed files, gray levels for grayscale files. The
// palette is deliberately not expanded so class ids survive.
dataset::LabelMap read_mask_png(const std::string& path);

// Writes a palette-indexed PNG using the given 256-entry RGB palette.
void write_mask_png(const std::string& path, const dataset::LabelMap& mask,
                    const std::vector<std::array<unsigned char, 3>>& palette);

// The standard VOC 256-entry colormap (bit-interleaved construction).
std::vector<std::array<unsigned char, 3>> voc_palette();

}  // namespace mlpmatch::io
