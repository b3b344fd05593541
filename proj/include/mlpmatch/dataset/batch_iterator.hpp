#pragma once

#include <cstdint>
#include <vector>

#include "mlpmatch/dataset/sample.hpp"

namespace mlpmatch::dataset {

// One epoch of paired labeled/unlabeled mini-batches. The unlabeled stream
// defines the epoch length; the labeled stream cycles with reshuffling. The
// whole schedule is materialized up front from (seed), so batch(step) is a
// pure lookup and mid-epoch resume is an index offset.
class EpochIterator {
 public:
  struct Batch {
    std::vector<const Sample*> labeled;
    std::vector<const Sample*> unlabeled;
  };

  EpochIterator(const std::vector<Sample>& labeled, const std::vector<Sample>& unlabeled,
                int batch_size, std::uint64_t seed);

  int steps() const { return steps_; }
  Batch batch(int step) const;

 private:
  const std::vector<Sample>* labeled_;
  const std::vector<Sample>* unlabeled_;
  int half_ = 0;
  int steps_ = 0;
  std::vector<int> labeled_seq_;    // length steps_ * half_
  std::vector<int> unlabeled_perm_; // length M_u
};

}  // namespace mlpmatch::dataset
