#pragma once

// Small datasets and configs shared by the trainer, evaluation and CLI tests.

#include <filesystem>
#include <string>

#include "coar/dataset.hpp"
#include "coar/trainer.hpp"

namespace coar::fixture {

/// 4 seen / 2 unseen classes, K = 6, 24 px images, 8 images per class.
Dataset tiny_dataset(std::uint64_t seed = 3);

/// Toy CNN with narrow stages and a 16-wide prototype net, 4-way 2-shot,
/// two episodes per epoch.
TrainConfig tiny_config(int epochs = 2);

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

std::string read_file(const std::filesystem::path& path);

}  // namespace coar::fixture
