#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "coar/model.hpp"

namespace coar {

/// Softmaxed attention channels upsampled to the input resolution and
/// min-max scaled to 0..255, plus the raw per-channel peaks.
struct AttentionMaps {
  int width = 0;
  int height = 0;
  std::vector<std::vector<std::uint8_t>> channels;  // K images, row-major
  std::vector<double> peaks;                        // raw max of each AM channel
};

AttentionMaps render_attention(const Model& model, const Tensor& image);

/// 8-bit grayscale PNG.
void write_png_gray(const std::filesystem::path& path, std::span<const std::uint8_t> pixels, int width, int height);

}  // namespace coar
