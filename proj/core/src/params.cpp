#include "coar/params.hpp"

#include <cmath>

namespace coar {

Tensor kaiming_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : t.values()) v = u(rng);
  return t;
}

DenseLayer DenseLayer::init(int in, int out, Rng& rng) {
  return DenseLayer{kaiming_uniform({in, out}, in, rng), Tensor({out}, 0.0)};
}

void DenseLayer::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".weight", &weight, true});
  out.push_back({prefix + ".bias", &bias, false});
}

}  // namespace coar
