#pragma once

#include <string>
#include <vector>

#include "coar/rng.hpp"
#include "coar/tensor.hpp"

namespace coar {

/// A trainable tensor as seen by the optimizer and the checkpoint writer.
struct NamedParam {
  std::string name;
  Tensor* value = nullptr;
  bool decay = true;  // weight decay applies; false for biases and embeddings' offsets
};

using ParamList = std::vector<NamedParam>;

/// Name of the weight initialisation recorded in checkpoint metadata.
inline constexpr const char* kInitDescriptor = "kaiming-uniform(fan_in), zero bias";

/// U(-sqrt(6/fan_in), sqrt(6/fan_in)) weights.
Tensor kaiming_uniform(std::vector<int> shape, int fan_in, Rng& rng);

struct DenseLayer {
  Tensor weight;  // in x out
  Tensor bias;    // out

  static DenseLayer init(int in, int out, Rng& rng);
  void collect(const std::string& prefix, ParamList& out);
};

}  // namespace coar
