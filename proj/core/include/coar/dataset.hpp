#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "coar/semantics.hpp"
#include "coar/tensor.hpp"

namespace coar {

enum class Split { Train, Test };

struct Sample {
  Tensor image;  // H x W x C, values in [0, 1]
  int label = 0;
  Split split = Split::Train;
};

/// Where each class draws its attributes. Only synthetic datasets carry one.
struct GlyphLayout {
  int grid = 0;       // cells per side
  int cell_size = 0;  // pixels per cell side
  int margin = 0;     // blank border inside each cell
  /// class_cells[class][attribute] = cell index (row-major in the grid), or -1.
  std::vector<std::vector<int>> class_cells;
  /// K x g x g x C glyph templates, g = cell_size - 2 * margin.
  Tensor glyphs;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<int> seen_classes;
  std::vector<int> unseen_classes;
  SemanticsTable semantics;
  int num_classes = 0;
  int num_attributes = 0;
  int image_size = 0;
  int channels = 0;
  std::optional<GlyphLayout> layout;

  bool is_seen(int label) const;
  /// Indices of samples matching a split and a seen/unseen side.
  std::vector<int> sample_indices(Split split, bool seen) const;

  /// Throws std::invalid_argument on any broken invariant: overlapping
  /// splits, labels outside the class partition, unseen training samples.
  void validate() const;
};

/// Writes manifest.json, class_semantics.csv, attribute_semantics.coar and
/// one tensor file per sample under `dir`.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace coar
