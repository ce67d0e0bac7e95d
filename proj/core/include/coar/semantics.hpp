#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "coar/tensor.hpp"

namespace coar {

/// How the K x K attribute semantics matrix is built.
enum class AttributeSemanticsMode { OneHot, Random, RandomOrthogonal };

std::string to_string(AttributeSemanticsMode mode);
AttributeSemanticsMode parse_semantics_mode(std::string_view text);

/// Class semantics (M x K attribute strengths) plus the attribute basis
/// (K x K) fed to the prototype network.
struct SemanticsTable {
  Tensor class_semantics;
  Tensor attribute_semantics;
  AttributeSemanticsMode mode = AttributeSemanticsMode::OneHot;

  int num_classes() const { return class_semantics.rows(); }
  int num_attributes() const { return class_semantics.cols(); }

  /// Throws std::invalid_argument if any invariant is violated.
  void validate() const;

  /// Rows of class_semantics for the listed classes, in that order.
  Tensor class_rows(std::span<const int> classes) const;
};

/// One-hot: identity. Random: N(0, 0.1^2) entries. RandomOrthogonal: the
/// random matrix with its rows Gram-Schmidt orthonormalised.
Tensor make_attribute_semantics(int num_attributes, AttributeSemanticsMode mode, std::uint64_t seed);

/// Semantic-loss targets: every class row rescaled per attribute to [0, 1]
/// using the min/max over `seen_classes`. Attributes that are constant over
/// the seen classes keep their value clamped to [0, 1].
Tensor semantic_targets(const SemanticsTable& table, std::span<const int> seen_classes);

}  // namespace coar
