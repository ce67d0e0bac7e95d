#include "gradcheck.hpp"

#include "coar/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

namespace coar::oracle {
namespace {

double rel(double a, double b, double floor) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor}); }

}  // namespace

namespace {

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

}  // namespace

GradCheckResult gradcheck(const std::function<double()>& f, const std::map<std::string, Tensor*>& params,
                          const std::map<std::string, Tensor>& analytic, const GradCheckOptions& opt) {
  GradCheckResult res;
  const double f0 = f();
  for (const auto& [name, tensor] : params) {
    auto it = analytic.find(name);
    if (it == analytic.end()) throw std::invalid_argument("no analytic gradient for " + name);
    const Tensor& a = it->second;
    if (a.size() != tensor->size()) throw std::invalid_argument("gradient size mismatch for " + name);
    const std::size_t n = tensor->size();
    std::size_t stride = 1;
    if (opt.max_per_tensor > 0 && n > static_cast<std::size_t>(opt.max_per_tensor)) {
      stride = (n + static_cast<std::size_t>(opt.max_per_tensor) - 1) / static_cast<std::size_t>(opt.max_per_tensor);
    }
    for (std::size_t i = 0; i < n; i += stride) {
      double& x = (*tensor)[i];
      const double saved = x;
      x = saved + opt.h;
      const double fp = f();
      x = saved - opt.h;
      const double fm = f();
      x = saved;
      const double central = (fp - fm) / (2 * opt.h);
      const double err = rel(a[i], central, opt.floor);
      if (opt.detect_kinks && err > 1e-4) {
        const double fwd = (fp - f0) / opt.h;
        const double bwd = (f0 - fm) / opt.h;
        const bool one_side_matches = std::min(rel(a[i], fwd, opt.floor), rel(a[i], bwd, opt.floor)) < 1e-2;
        if (one_side_matches && rel(fwd, bwd, opt.floor) > 1e-2) {
          ++res.kinks;
          continue;
        }
      }
      ++res.checked;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst = name + "[" + std::to_string(i) + "] analytic " + sci(a[i]) + " numeric " + sci(central);
      }
    }
  }
  return res;
}

GradCheckResult gradcheck_graph(const GraphFn& build, std::vector<Tensor> inputs, const GradCheckOptions& options) {
  Tensor projection;
  auto scalar = [&](ag::Graph& g, const std::vector<ag::Var>& vars) {
    ag::Var out = build(g, vars);
    if (out.value().size() == 1) return ag::sum(out);
    if (projection.size() != out.value().size()) {
      projection = Tensor(out.shape());
      std::mt19937_64 rng(99);
      std::normal_distribution<double> n(0.0, 1.0);
      for (double& v : projection.values()) v = n(rng);
    }
    return ag::sum(ag::mul(out, g.constant(projection)));
  };
  std::map<std::string, Tensor*> params;
  std::map<std::string, Tensor> analytic;
  {
    ag::Graph g;
    std::vector<ag::Var> vars;
    for (const Tensor& t : inputs) vars.push_back(g.variable(t));
    ag::Var s = scalar(g, vars);
    g.backward(s);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const std::string name = "input" + std::to_string(i);
      params[name] = &inputs[i];
      analytic[name] = g.grad(vars[i]);
    }
  }
  auto f = [&] {
    ag::Graph g;
    std::vector<ag::Var> vars;
    for (const Tensor& t : inputs) vars.push_back(g.constant(t));
    return scalar(g, vars).value()[0];
  };
  return gradcheck(f, params, analytic, options);
}

}  // namespace coar::oracle
