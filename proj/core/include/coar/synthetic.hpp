#pragma once

#include <cstdint>
#include <stdexcept>

#include "coar/dataset.hpp"

namespace coar {

/// Compositional-attribute toy dataset. Every class is a distinct subset of
/// the K attributes; each active attribute is drawn as its own coloured
/// glyph in a grid cell fixed per class, plus Gaussian pixel noise.
struct SynthSpec {
  int n_seen = 20;
  int n_unseen = 5;
  int num_attributes = 12;
  int images_per_class = 30;
  int image_size = 64;
  int channels = 3;
  double noise_std = 0.05;
  /// Uniform jitter added to active semantics entries (then clamped >= 0).
  double semantics_jitter = 0.0;
  /// Fraction of each seen class's images held out for generalized evaluation.
  double test_fraction = 0.2;
  std::uint64_t seed = 1;
};

class SynthSpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Smallest grid side that holds `num_attributes` cells.
int glyph_grid_side(int num_attributes);

Dataset generate_synthetic(const SynthSpec& spec);

/// Noise-free render of one class, as stored images are produced before noise.
Tensor render_class_image(const GlyphLayout& layout, int label, int image_size, int channels);

}  // namespace coar
