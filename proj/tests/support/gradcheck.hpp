#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "coar/autograd.hpp"
#include "coar/tensor.hpp"

namespace coar::oracle {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<name>[index]" of the largest error
  int checked = 0;
  int kinks = 0;  // coordinates skipped because f is not differentiable there
};

struct GradCheckOptions {
  double h = 1e-5;
  double floor = 1e-6;  // rel = |a - n| / max(|a|, |n|, floor)
  int max_per_tensor = -1;  // check at most this many evenly spaced entries
  bool detect_kinks = true;
};

/// Central differences of `f` around the current values of `params`,
/// compared to `analytic` (same keys). Each parameter is restored afterwards.
/// A coordinate whose one-sided slopes disagree by more than the central
/// error can explain (a ReLU or max crossing inside [x-h, x+h]) is counted
/// as a kink and left out of the maximum.
GradCheckResult gradcheck(const std::function<double()>& f, const std::map<std::string, Tensor*>& params,
                          const std::map<std::string, Tensor>& analytic, const GradCheckOptions& options = {});

/// Builds `build` over graph variables holding `inputs`, reduces a
/// non-scalar output with a fixed random projection, and gradchecks every
/// input. Works on a copy of `inputs`.
using GraphFn = std::function<ag::Var(ag::Graph&, const std::vector<ag::Var>&)>;
GradCheckResult gradcheck_graph(const GraphFn& build, std::vector<Tensor> inputs, const GradCheckOptions& options = {});

}  // namespace coar::oracle
