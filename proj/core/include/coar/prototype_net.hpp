#pragma once

// Semantic-to-visual prototype generator.
//
//   trunk:  x -> FC(K, h) -> ReLU -> FC(h, h)
//   branch: x -> ReLU -> CN -> CN -> FC(h, C) -> ReLU
//
// Class semantics go through trunk + class branch, attribute semantics
// through trunk + attribute branch. CN standardises each column over the
// rows passed in, so prototypes depend on which classes are fed together.

#include <map>
#include <string>
#include <string_view>

#include "coar/autograd.hpp"
#include "coar/params.hpp"

namespace coar {

enum class PrototypeVariant {
  SharedBranched,  // shared trunk, separate branches (default)
  Separate,        // independent trunk + branch per prototype kind
  FullyShared,     // one trunk, one branch for both kinds
};

std::string to_string(PrototypeVariant variant);
PrototypeVariant parse_prototype_variant(std::string_view text);

struct PrototypeNetConfig {
  int num_attributes = 0;
  int hidden_size = 1024;
  int output_dim = 0;
  PrototypeVariant variant = PrototypeVariant::SharedBranched;
  bool class_norm = true;
};

struct TrunkParams {
  DenseLayer fc1;
  DenseLayer fc2;
};

struct PrototypeNetParams {
  PrototypeNetConfig config;
  TrunkParams trunk;       // the shared trunk; the class trunk for Separate
  TrunkParams attr_trunk;  // Separate only
  DenseLayer class_branch;
  DenseLayer attr_branch;  // unused by FullyShared

  static PrototypeNetParams init(const PrototypeNetConfig& config, Rng& rng);
  void collect(ParamList& out);
  bool all_finite();
};

struct PrototypeSet {
  Tensor class_prototypes;      // M x C
  Tensor attribute_prototypes;  // K x C
};

inline constexpr double kClassNormEps = 1e-5;

/// Column standardisation with population variance and eps = 1e-5.
Tensor class_normalize(const Tensor& x);

namespace ag {
struct PrototypeVars {
  Var class_prototypes;
  Var attribute_prototypes;
};

/// Class-side path only (trunk + class branch).
Var class_prototypes(ParamBinder& bind, const PrototypeNetParams& params, Var class_semantics);
/// Attribute-side path only.
Var attribute_prototypes(ParamBinder& bind, const PrototypeNetParams& params, Var attribute_semantics);
PrototypeVars forward_prototypes(ParamBinder& bind, const PrototypeNetParams& params, Var class_semantics,
                                 Var attribute_semantics);
}  // namespace ag

PrototypeSet forward_prototypes(const PrototypeNetParams& params, const Tensor& class_semantics,
                                const Tensor& attribute_semantics);

/// Gradients of sum(upstream_cp * CP) + sum(upstream_ap * AP) w.r.t. every
/// parameter, keyed by parameter name.
std::map<std::string, Tensor> prototype_grads(const PrototypeNetParams& params, const Tensor& class_semantics,
                                              const Tensor& attribute_semantics, const Tensor& upstream_cp,
                                              const Tensor& upstream_ap);

}  // namespace coar
