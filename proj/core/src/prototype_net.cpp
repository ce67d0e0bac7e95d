#include "coar/prototype_net.hpp"

#include <stdexcept>

#include "coar/ops.hpp"

namespace coar {

std::string to_string(PrototypeVariant variant) {
  switch (variant) {
    case PrototypeVariant::SharedBranched: return "shared-branched";
    case PrototypeVariant::Separate: return "separate";
    case PrototypeVariant::FullyShared: return "fully-shared";
  }
  return "shared-branched";
}

PrototypeVariant parse_prototype_variant(std::string_view text) {
  if (text == "shared-branched") return PrototypeVariant::SharedBranched;
  if (text == "separate") return PrototypeVariant::Separate;
  if (text == "fully-shared") return PrototypeVariant::FullyShared;
  throw std::invalid_argument("unknown prototype variant '" + std::string(text) + "'");
}

PrototypeNetParams PrototypeNetParams::init(const PrototypeNetConfig& config, Rng& rng) {
  if (config.num_attributes < 1 || config.hidden_size < 1 || config.output_dim < 1) {
    throw std::invalid_argument("prototype net dimensions must be positive");
  }
  const int K = config.num_attributes;
  const int h = config.hidden_size;
  const int C = config.output_dim;
  PrototypeNetParams p;
  p.config = config;
  p.trunk = {DenseLayer::init(K, h, rng), DenseLayer::init(h, h, rng)};
  p.class_branch = DenseLayer::init(h, C, rng);
  if (config.variant == PrototypeVariant::Separate) p.attr_trunk = {DenseLayer::init(K, h, rng), DenseLayer::init(h, h, rng)};
  if (config.variant != PrototypeVariant::FullyShared) p.attr_branch = DenseLayer::init(h, C, rng);
  return p;
}

void PrototypeNetParams::collect(ParamList& out) {
  trunk.fc1.collect("proto.trunk.fc1", out);
  trunk.fc2.collect("proto.trunk.fc2", out);
  if (config.variant == PrototypeVariant::Separate) {
    attr_trunk.fc1.collect("proto.attr_trunk.fc1", out);
    attr_trunk.fc2.collect("proto.attr_trunk.fc2", out);
  }
  class_branch.collect("proto.class_branch", out);
  if (config.variant != PrototypeVariant::FullyShared) attr_branch.collect("proto.attr_branch", out);
}

bool PrototypeNetParams::all_finite() {
  ParamList list;
  collect(list);
  for (const auto& p : list) {
    if (!p.value->all_finite()) return false;
  }
  return true;
}

Tensor class_normalize(const Tensor& x) {
  ag::Graph g;
  return ag::class_normalize(g.constant(x), kClassNormEps).value();
}

namespace ag {
namespace {

Var dense(ParamBinder& bind, const DenseLayer& layer, Var x) {
  return add_row(matmul(x, bind(layer.weight)), bind(layer.bias));
}

Var trunk_forward(ParamBinder& bind, const TrunkParams& t, Var x) {
  return dense(bind, t.fc2, relu(dense(bind, t.fc1, x)));
}

Var branch_forward(ParamBinder& bind, const DenseLayer& fc, bool class_norm, Var x) {
  Var h = relu(x);
  if (class_norm) h = class_normalize(class_normalize(h, kClassNormEps), kClassNormEps);
  return relu(dense(bind, fc, h));
}

void check_input(const PrototypeNetParams& params, Var s) {
  if (s.cols() != params.config.num_attributes) {
    throw ShapeError("prototype net expects " + std::to_string(params.config.num_attributes) +
                     " semantic columns, got " + std::to_string(s.cols()));
  }
  if (s.rows() < 1) throw ShapeError("prototype net needs at least one semantics row");
}

}  // namespace

Var class_prototypes(ParamBinder& bind, const PrototypeNetParams& params, Var class_semantics) {
  check_input(params, class_semantics);
  return branch_forward(bind, params.class_branch, params.config.class_norm,
                        trunk_forward(bind, params.trunk, class_semantics));
}

Var attribute_prototypes(ParamBinder& bind, const PrototypeNetParams& params, Var attribute_semantics) {
  check_input(params, attribute_semantics);
  const auto& cfg = params.config;
  const TrunkParams& trunk = cfg.variant == PrototypeVariant::Separate ? params.attr_trunk : params.trunk;
  const DenseLayer& branch = cfg.variant == PrototypeVariant::FullyShared ? params.class_branch : params.attr_branch;
  return branch_forward(bind, branch, cfg.class_norm, trunk_forward(bind, trunk, attribute_semantics));
}

PrototypeVars forward_prototypes(ParamBinder& bind, const PrototypeNetParams& params, Var class_semantics,
                                 Var attribute_semantics) {
  return {class_prototypes(bind, params, class_semantics), attribute_prototypes(bind, params, attribute_semantics)};
}

}  // namespace ag

PrototypeSet forward_prototypes(const PrototypeNetParams& params, const Tensor& class_semantics,
                                const Tensor& attribute_semantics) {
  ag::Graph g;
  ag::ParamBinder bind(g, false);
  auto vars = ag::forward_prototypes(bind, params, g.constant(class_semantics), g.constant(attribute_semantics));
  return {vars.class_prototypes.value(), vars.attribute_prototypes.value()};
}

std::map<std::string, Tensor> prototype_grads(const PrototypeNetParams& params, const Tensor& class_semantics,
                                              const Tensor& attribute_semantics, const Tensor& upstream_cp,
                                              const Tensor& upstream_ap) {
  ag::Graph g;
  ag::ParamBinder bind(g, true);
  auto vars = ag::forward_prototypes(bind, params, g.constant(class_semantics), g.constant(attribute_semantics));
  if (upstream_cp.size() != vars.class_prototypes.value().size() ||
      upstream_ap.size() != vars.attribute_prototypes.value().size()) {
    throw ShapeError("upstream gradient shape does not match prototypes");
  }
  ag::Var objective = ag::add(ag::sum(ag::mul(vars.class_prototypes, g.constant(upstream_cp.reshaped(vars.class_prototypes.shape())))),
                              ag::sum(ag::mul(vars.attribute_prototypes,
                                              g.constant(upstream_ap.reshaped(vars.attribute_prototypes.shape())))));
  g.backward(objective);
  std::map<std::string, Tensor> grads;
  PrototypeNetParams& mutable_params = const_cast<PrototypeNetParams&>(params);
  ParamList list;
  mutable_params.collect(list);
  for (const auto& p : list) grads.emplace(p.name, bind.grad(*p.value));
  return grads;
}

}  // namespace coar
