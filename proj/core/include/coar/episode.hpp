#pragma once

#include <vector>

#include "coar/dataset.hpp"
#include "coar/rng.hpp"

namespace coar {

/// An n-way k-shot mini-batch drawn from the training split of seen classes.
/// Samples are referenced by index into the owning Dataset.
struct EpisodeBatch {
  std::vector<int> sample_indices;
  std::vector<int> labels;
  int n_way = 0;
  int k_shot = 0;

  int size() const { return static_cast<int>(sample_indices.size()); }
};

/// Classes are drawn without replacement within an episode, samples without
/// replacement within a class. Advances `rng`.
EpisodeBatch sample_episode(const Dataset& dataset, int n_way, int k_shot, Rng& rng);

}  // namespace coar
