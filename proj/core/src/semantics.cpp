#include "coar/semantics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "coar/rng.hpp"

namespace coar {

std::string to_string(AttributeSemanticsMode mode) {
  switch (mode) {
    case AttributeSemanticsMode::OneHot: return "one-hot";
    case AttributeSemanticsMode::Random: return "random";
    case AttributeSemanticsMode::RandomOrthogonal: return "random-orthogonal";
  }
  return "one-hot";
}

AttributeSemanticsMode parse_semantics_mode(std::string_view text) {
  if (text == "one-hot") return AttributeSemanticsMode::OneHot;
  if (text == "random") return AttributeSemanticsMode::Random;
  if (text == "random-orthogonal") return AttributeSemanticsMode::RandomOrthogonal;
  throw std::invalid_argument("unknown attribute semantics mode '" + std::string(text) + "'");
}

void SemanticsTable::validate() const {
  const int M = class_semantics.rows();
  const int K = class_semantics.cols();
  if (class_semantics.rank() != 2 || M < 1 || K < 1) throw std::invalid_argument("class semantics must be a non-empty matrix");
  if (attribute_semantics.rank() != 2 || attribute_semantics.rows() != K || attribute_semantics.cols() != K) {
    throw std::invalid_argument("attribute semantics must be " + std::to_string(K) + "x" + std::to_string(K));
  }
  for (int i = 0; i < M; ++i) {
    bool any = false;
    for (int j = 0; j < K; ++j) {
      const double v = class_semantics.at(i, j);
      if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("class semantics must be finite and non-negative");
      any = any || v != 0.0;
    }
    if (!any) throw std::invalid_argument("class " + std::to_string(i) + " has an all-zero semantics row");
  }
  if (!attribute_semantics.all_finite()) throw std::invalid_argument("attribute semantics not finite");
  if (mode == AttributeSemanticsMode::OneHot) {
    for (int i = 0; i < K; ++i) {
      for (int j = 0; j < K; ++j) {
        if ((i == j) != (attribute_semantics.at(i, j) != 0.0)) {
          throw std::invalid_argument("one-hot attribute semantics must be nonzero exactly on the diagonal");
        }
      }
    }
  } else if (mode == AttributeSemanticsMode::RandomOrthogonal) {
    for (int i = 0; i < K; ++i) {
      for (int j = i + 1; j < K; ++j) {
        double dot = 0.0;
        for (int c = 0; c < K; ++c) dot += attribute_semantics.at(i, c) * attribute_semantics.at(j, c);
        if (std::abs(dot) > 1e-6) throw std::invalid_argument("random-orthogonal attribute semantics rows are not orthogonal");
      }
    }
  }
}

Tensor SemanticsTable::class_rows(std::span<const int> classes) const {
  const int K = num_attributes();
  Tensor out({static_cast<int>(classes.size()), K});
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const int c = classes[i];
    if (c < 0 || c >= num_classes()) throw std::out_of_range("class index " + std::to_string(c));
    std::copy_n(class_semantics.row(c).data(), K, out.row(static_cast<int>(i)).data());
  }
  return out;
}

Tensor make_attribute_semantics(int num_attributes, AttributeSemanticsMode mode, std::uint64_t seed) {
  const int K = num_attributes;
  if (K < 1) throw std::invalid_argument("num_attributes must be positive");
  Tensor out({K, K});
  if (mode == AttributeSemanticsMode::OneHot) {
    for (int i = 0; i < K; ++i) out.at(i, i) = 1.0;
    return out;
  }
  Rng rng(derive_seed(seed, "attribute-semantics"));
  std::normal_distribution<double> normal(0.0, 0.1);
  for (double& v : out.values()) v = normal(rng);
  if (mode == AttributeSemanticsMode::RandomOrthogonal) {
    // modified Gram-Schmidt over rows
    for (int i = 0; i < K; ++i) {
      auto ri = out.row(i);
      for (int j = 0; j < i; ++j) {
        auto rj = out.row(j);
        double dot = 0.0;
        for (int c = 0; c < K; ++c) dot += ri[c] * rj[c];
        for (int c = 0; c < K; ++c) ri[c] -= dot * rj[c];
      }
      double norm = 0.0;
      for (double v : ri) norm += v * v;
      norm = std::sqrt(norm);
      if (norm < 1e-12) throw std::runtime_error("degenerate random matrix during orthogonalisation");
      for (double& v : ri) v /= norm;
    }
  }
  return out;
}

Tensor semantic_targets(const SemanticsTable& table, std::span<const int> seen_classes) {
  const int M = table.num_classes();
  const int K = table.num_attributes();
  if (seen_classes.empty()) throw std::invalid_argument("semantic_targets needs at least one seen class");
  Tensor out({M, K});
  for (int j = 0; j < K; ++j) {
    double lo = table.class_semantics.at(seen_classes.front(), j);
    double hi = lo;
    for (int c : seen_classes) {
      lo = std::min(lo, table.class_semantics.at(c, j));
      hi = std::max(hi, table.class_semantics.at(c, j));
    }
    for (int i = 0; i < M; ++i) {
      const double v = table.class_semantics.at(i, j);
      out.at(i, j) = hi > lo ? std::clamp((v - lo) / (hi - lo), 0.0, 1.0) : std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace coar
