#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mlpmatch/dataset/sample.hpp"

namespace mlpmatch::dataset {

// VOC-style directory layout:
//   <root>/images/<id>.jpg or <id>.png   (RGB)
//   <root>/masks/<id>.png                (palette-indexed or grayscale ids)
// Mask values must lie in {0..num_classes-1} or 255 (ignore).
std::pair<std::vector<Sample>, std::vector<Sample>> load_voc_dir(const std::string& root,
                                                                 const SplitSpec& split);

// Loads one id list ("one id per line", '#' comments allowed).
std::vector<std::string> read_id_list(const std::string& path);

// Loads labeled samples for a plain id list (evaluation splits).
std::vector<Sample> load_voc_samples(const std::string& root,
                                     const std::vector<std::string>& ids, int num_classes,
                                     bool with_labels);

// Writes samples to the layout above; labels are written as palette PNGs.
void write_voc_dir(const std::string& root, const std::vector<Sample>& labeled,
                   const std::vector<Sample>& unlabeled, const std::vector<Sample>& val);

}  // namespace mlpmatch::dataset
