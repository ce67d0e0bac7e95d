#include "coar/episode.hpp"

#include <map>
#include <stdexcept>

namespace coar {
namespace {

// Moves `count` uniformly chosen elements to the front of `items`.
void partial_shuffle(std::vector<int>& items, int count, Rng& rng) {
  const int n = static_cast<int>(items.size());
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(items[static_cast<std::size_t>(i)], items[static_cast<std::size_t>(pick(rng))]);
  }
}

}  // namespace

EpisodeBatch sample_episode(const Dataset& dataset, int n_way, int k_shot, Rng& rng) {
  if (n_way < 1 || k_shot < 1) throw std::invalid_argument("n_way and k_shot must be positive");
  if (n_way > static_cast<int>(dataset.seen_classes.size())) {
    throw std::invalid_argument("n_way " + std::to_string(n_way) + " exceeds " +
                                std::to_string(dataset.seen_classes.size()) + " seen classes");
  }
  std::map<int, std::vector<int>> by_class;
  for (int c : dataset.seen_classes) by_class[c];
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const Sample& s = dataset.samples[i];
    if (s.split == Split::Train && by_class.contains(s.label)) by_class[s.label].push_back(static_cast<int>(i));
  }
  for (const auto& [c, idx] : by_class) {
    if (static_cast<int>(idx.size()) < k_shot) {
      throw std::invalid_argument("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                                  " training samples, fewer than k_shot=" + std::to_string(k_shot));
    }
  }

  std::vector<int> classes = dataset.seen_classes;
  partial_shuffle(classes, n_way, rng);
  EpisodeBatch batch;
  batch.n_way = n_way;
  batch.k_shot = k_shot;
  for (int w = 0; w < n_way; ++w) {
    const int c = classes[static_cast<std::size_t>(w)];
    std::vector<int> pool = by_class[c];
    partial_shuffle(pool, k_shot, rng);
    for (int k = 0; k < k_shot; ++k) {
      batch.sample_indices.push_back(pool[static_cast<std::size_t>(k)]);
      batch.labels.push_back(c);
    }
  }
  return batch;
}

}  // namespace coar
