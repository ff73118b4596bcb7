#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "rte/autodiff.hpp"

namespace rte {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so gradients that are zero up
  // to round-off are compared absolutely.
  double floor = 1e-6;
  std::size_t max_parameters = 10000;
  // Only parameters whose name starts with this prefix are checked.
  std::string name_prefix;
};

struct ParameterDeviation {
  std::string name;
  int node = -1;
  double max_relative_error = 0.0;
};

struct GradCheckReport {
  std::vector<ParameterDeviation> parameters;
  double max_relative_error = 0.0;
  bool passed = false;
  std::string message;
};

/// Compares backward() against central differences for every parameter
/// leaf of the graph. Leaves are restored and the graph replayed afterwards.
template <typename Scalar>
GradCheckReport check_gradients(Graph<Scalar>& graph, Var<Scalar> loss, const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  auto params = graph.parameters();
  std::erase_if(params, [&](const Var<Scalar>& p) { return !graph.node(p.id).op.starts_with(opt.name_prefix); });
  std::size_t total = 0;
  for (const auto& p : params) total += static_cast<std::size_t>(p.value().size());
  if (total > opt.max_parameters) {
    report.message = "graph has " + std::to_string(total) + " parameters, limit is " +
                     std::to_string(opt.max_parameters);
    return report;
  }

  graph.forward();
  graph.backward(loss);
  std::vector<Matrix<Scalar>> analytic;
  for (const auto& p : params) analytic.push_back(p.grad());

  const auto h = static_cast<Scalar>(opt.step);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    ParameterDeviation dev{graph.node(params[pi].id).op, params[pi].id, 0.0};
    auto& value = graph.mutable_value(params[pi]);
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const Scalar saved = value.data()[i];
      value.data()[i] = saved + h;
      graph.forward();
      const double up = static_cast<double>(loss.scalar());
      value.data()[i] = saved - h;
      graph.forward();
      const double down = static_cast<double>(loss.scalar());
      value.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = static_cast<double>(analytic[pi].data()[i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.floor});
      dev.max_relative_error = std::max(dev.max_relative_error, std::abs(a - numeric) / denom);
    }
    report.max_relative_error = std::max(report.max_relative_error, dev.max_relative_error);
    report.parameters.push_back(dev);
  }
  graph.forward();
  report.passed = report.max_relative_error <= opt.tolerance;
  if (!report.passed) report.message = "max relative error " + std::to_string(report.max_relative_error);
  return report;
}

}  // namespace rte
