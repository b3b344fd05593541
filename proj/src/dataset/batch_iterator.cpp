#include "mlpmatch/dataset/batch_iterator.hpp"

#include <numeric>

#include "mlpmatch/core/rng.hpp"

namespace mlpmatch::dataset {
namespace {

// Fisher-Yates with our own stream so the order is seed-stable.
void shuffle_indices(std::vector<int>& v, Rng& rng) {
  for (int i = static_cast<int>(v.size()) - 1; i > 0; --i)
    std::swap(v[i], v[rng.uniform_int(0, i)]);
}

}  // namespace

EpochIterator::EpochIterator(const std::vector<Sample>& labeled,
                             const std::vector<Sample>& unlabeled, int batch_size,
                             std::uint64_t seed)
    : labeled_(&labeled), unlabeled_(&unlabeled) {
  if (batch_size < 2 || batch_size % 2 != 0)
    throw ConfigError("batch_size must be even and >= 2");
  if (labeled.empty()) throw ConfigError("epoch iterator: labeled set is empty");
  half_ = batch_size / 2;

  const int m_u = static_cast<int>(unlabeled.size());
  const int m_x = static_cast<int>(labeled.size());
  steps_ = m_u > 0 ? (m_u + half_ - 1) / half_ : (m_x + half_ - 1) / half_;

  Rng rng(mix64(seed));

  unlabeled_perm_.resize(static_cast<std::size_t>(m_u));
  std::iota(unlabeled_perm_.begin(), unlabeled_perm_.end(), 0);
  shuffle_indices(unlabeled_perm_, rng);

  const int labeled_draws = m_u > 0 ? steps_ * half_ : m_x;
  std::vector<int> cycle(static_cast<std::size_t>(m_x));
  std::iota(cycle.begin(), cycle.end(), 0);
  labeled_seq_.reserve(static_cast<std::size_t>(labeled_draws));
  while (static_cast<int>(labeled_seq_.size()) < labeled_draws) {
    shuffle_indices(cycle, rng);
    for (int idx : cycle) {
      if (static_cast<int>(labeled_seq_.size()) >= labeled_draws) break;
      labeled_seq_.push_back(idx);
    }
  }
}

EpochIterator::Batch EpochIterator::batch(int step) const {
  if (step < 0 || step >= steps_) throw ContractError("epoch iterator: step out of range");
  Batch b;
  const int lab_begin = step * half_;
  const int lab_end = std::min<int>(lab_begin + half_, static_cast<int>(labeled_seq_.size()));
  for (int i = lab_begin; i < lab_end; ++i)
    b.labeled.push_back(&(*labeled_)[static_cast<std::size_t>(labeled_seq_[static_cast<std::size_t>(i)])]);
  const int unl_begin = step * half_;
  const int unl_end = std::min<int>(unl_begin + half_, static_cast<int>(unlabeled_perm_.size()));
  for (int i = unl_begin; i < unl_end; ++i)
    b.unlabeled.push_back(&(*unlabeled_)[static_cast<std::size_t>(unlabeled_perm_[static_cast<std::size_t>(i)])]);
  return b;
}

}  // namespace mlpmatch::dataset
