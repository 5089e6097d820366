#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "cmwm/graph.hpp"

namespace cmwm {

struct GradCheckReport {
  double max_rel_err = 0;
  double max_abs_err = 0;
  int64_t elements = 0;
  bool finite = true;

  bool pass(double tol = 1e-4) const { return finite && max_rel_err < tol; }
};

/// Central finite differences vs analytic gradients, in 64-bit.
/// `build` must be a pure function of the input tensors: it receives a fresh
/// graph plus input nodes (in the order of `inputs`) and returns a scalar
/// loss node. Any internal randomness must be re-seeded inside `build`.
inline GradCheckReport grad_check(
    const std::function<Graph<double>::NodeId(
        Graph<double>&, const std::vector<Graph<double>::NodeId>&)>& build,
    std::vector<Tensor<double>> inputs, double h = 1e-5) {
  GradCheckReport report;

  // analytic gradients
  std::vector<Tensor<double>> analytic;
  {
    Graph<double> g;
    std::vector<Graph<double>::NodeId> nodes;
    for (const auto& x : inputs) nodes.push_back(g.input(x, true));
    const auto root = build(g, nodes);
    g.backward(root);
    for (auto id : nodes) {
      const Tensor<double>& gr = g.grad(id);
      analytic.push_back(gr.empty() ? Tensor<double>::zeros(g.value(id).shape())
                                    : gr);
    }
  }

  auto forward_value = [&](const std::vector<Tensor<double>>& xs) {
    Graph<double> g;
    std::vector<Graph<double>::NodeId> nodes;
    for (const auto& x : xs) nodes.push_back(g.input(x, false));
    return g.scalar(build(g, nodes));
  };

  for (size_t t = 0; t < inputs.size(); ++t) {
    for (int64_t i = 0; i < inputs[t].numel(); ++i) {
      const double keep = inputs[t][i];
      inputs[t][i] = keep + h;
      const double fp = forward_value(inputs);
      inputs[t][i] = keep - h;
      const double fm = forward_value(inputs);
      inputs[t][i] = keep;
      const double numeric = (fp - fm) / (2 * h);
      const double exact = analytic[t][i];
      if (!std::isfinite(numeric) || !std::isfinite(exact)) {
        report.finite = false;
        continue;
      }
      const double abs_err = std::abs(numeric - exact);
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      ++report.elements;
      // below the central-difference noise floor the ratio is meaningless
      if (abs_err < 1e-8) continue;
      const double denom = std::max(std::abs(numeric) + std::abs(exact), 1e-6);
      report.max_rel_err = std::max(report.max_rel_err, abs_err / denom);
    }
  }
  return report;
}

/// Same check, but against named parameters referenced through g.param(...)
/// inside `build` (the real model forward paths). Parameter values are
/// perturbed in place and restored; gradient accumulators are clobbered.
inline GradCheckReport grad_check_params(
    const std::function<Graph<double>::NodeId(Graph<double>&)>& build,
    const std::vector<Parameter<double>*>& params, double h = 1e-5) {
  GradCheckReport report;

  std::vector<Tensor<double>> analytic;
  {
    for (auto* p : params)
      for (int64_t i = 0; i < p->grad.numel(); ++i) p->grad[i] = 0;
    Graph<double> g;
    const auto root = build(g);
    g.backward(root);
    g.flush_param_grads();
    for (auto* p : params) analytic.push_back(p->grad);
  }

  auto forward_value = [&] {
    Graph<double> g;
    return g.scalar(build(g));
  };

  for (size_t t = 0; t < params.size(); ++t) {
    Parameter<double>* p = params[t];
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double fp = forward_value();
      p->value[i] = keep - h;
      const double fm = forward_value();
      p->value[i] = keep;
      const double numeric = (fp - fm) / (2 * h);
      const double exact = analytic[t][i];
      if (!std::isfinite(numeric) || !std::isfinite(exact)) {
        report.finite = false;
        continue;
      }
      const double abs_err = std::abs(numeric - exact);
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      ++report.elements;
      // below the central-difference noise floor the ratio is meaningless
      if (abs_err < 1e-8) continue;
      const double denom = std::max(std::abs(numeric) + std::abs(exact), 1e-6);
      report.max_rel_err = std::max(report.max_rel_err, abs_err / denom);
    }
  }
  for (auto* p : params)
    for (int64_t i = 0; i < p->grad.numel(); ++i) p->grad[i] = 0;
  return report;
}

}  // namespace cmwm
