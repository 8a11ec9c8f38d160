#pragma once

// Central finite-difference verification of the reverse-mode gradients.
// Report-only: callers decide what to do with the worst offenders.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sap/autodiff.hpp"

namespace sap::ad {

struct FdParamResult {
  NodeId param = -1;
  std::string name;       // optional caller-supplied label
  int worst_index = -1;   // flat index of the worst entry, -1 if param empty
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct FdReport {
  std::vector<FdParamResult> per_param;
  double max_rel_err = 0.0;

  bool passed(double tol) const { return max_rel_err <= tol; }
};

inline double fd_relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Central differences (f(p+h) - f(p-h)) / 2h per scalar parameter entry,
// compared against one analytic backward pass.
inline FdReport finite_difference_check(Graph& g, NodeId output, const std::vector<NodeId>& params,
                                        double h = 1e-5, const std::vector<std::string>& names = {}) {
  if (h < 1e-7 || h > 1e-3) throw std::invalid_argument("finite_difference_check: h outside [1e-7, 1e-3]");
  g.forward();
  Gradients analytic = g.backward(output, params);

  FdReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const NodeId p = params[pi];
    FdParamResult res;
    res.param = p;
    if (pi < names.size()) res.name = names[pi];
    const Tensor& grad = analytic.at(p);
    Tensor base = g.value(p);
    for (long long i = 0; i < base.size(); ++i) {
      const double v0 = base[static_cast<std::size_t>(i)];
      base[static_cast<std::size_t>(i)] = v0 + h;
      g.set_value(p, base);
      g.forward();
      const double fp = g.value(output)[0];
      base[static_cast<std::size_t>(i)] = v0 - h;
      g.set_value(p, base);
      g.forward();
      const double fm = g.value(output)[0];
      base[static_cast<std::size_t>(i)] = v0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = fd_relative_error(grad[static_cast<std::size_t>(i)], numeric);
      if (err >= res.rel_err) {
        res.rel_err = err;
        res.worst_index = static_cast<int>(i);
        res.analytic = grad[static_cast<std::size_t>(i)];
        res.numeric = numeric;
      }
    }
    g.set_value(p, base);
    report.max_rel_err = std::max(report.max_rel_err, res.rel_err);
    report.per_param.push_back(std::move(res));
  }
  g.forward();  // restore forward values at the base point
  return report;
}

}  // namespace sap::ad
