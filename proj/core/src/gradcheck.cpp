// SPDX-License-Identifier: Apache-2.0
#include "attrdialog/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

namespace attrdialog {

const GradientCheckEntry* GradientCheckReport::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::string GradientCheckReport::summary() const {
  std::ostringstream out;
  for (const auto& e : entries) {
    out << e.name << ": max_rel=" << e.max_relative_error
        << " max_abs=" << e.max_absolute_error << " (" << e.entries << ")\n";
  }
  return out.str();
}

double gradient_relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const Computation& computation) {
  ad::Graph graph;
  return computation(graph).value()[0];
}

}  // namespace

GradientCheckReport check_gradients(const Computation& computation,
                                    std::span<const NamedTensor> params,
                                    double eps, double floor) {
  for (const auto& p : params) p.tensor->drop_grad();
  std::vector<std::vector<double>> analytic;
  {
    ad::Graph graph;
    ad::Expr out = computation(graph);
    graph.backward(out);
    for (const auto& p : params) {
      auto g = std::as_const(*p.tensor).grad();
      analytic.emplace_back(g.begin(), g.end());
      if (analytic.back().empty()) analytic.back().assign(p.tensor->size(), 0.0);
      p.tensor->drop_grad();
    }
  }

  GradientCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    GradientCheckEntry entry;
    entry.name = params[k].name;
    auto values = params[k].tensor->values();
    entry.entries = values.size();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + eps;
      const double plus = evaluate(computation);
      values[i] = original - eps;
      const double minus = evaluate(computation);
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[k][i];
      entry.max_absolute_error = std::max(entry.max_absolute_error, std::abs(a - numeric));
      entry.max_relative_error = std::max(entry.max_relative_error,
                                          gradient_relative_error(a, numeric, floor));
    }
    report.max_relative_error = std::max(report.max_relative_error, entry.max_relative_error);
    report.entries.push_back(entry);
  }
  return report;
}

GradientCheckReport check_gradients(const Computation& computation,
                                    ParameterSet& params, double eps, double floor) {
  std::vector<NamedTensor> named;
  for (std::size_t i = 0; i < params.size(); ++i) {
    named.push_back({params.name(i), &params.tensor(i)});
  }
  return check_gradients(computation, named, eps, floor);
}

}  // namespace attrdialog
