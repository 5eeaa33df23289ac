#include "schemanet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace schemanet {
namespace {

double evaluate(const GradCheckFn& fn, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  const Var<double> out = fn(tape, vars);
  if (out.value().size() != 1) throw ShapeError("grad_check: function must return a 1x1 scalar");
  return out.value()[0];
}

}  // namespace

GradCheckReport grad_check(const GradCheckFn& fn, const std::vector<Tensor<double>>& inputs,
                           const GradCheckOptions& options) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.variable(t));
    const Var<double> out = fn(tape, vars);
    if (out.value().size() != 1) throw ShapeError("grad_check: function must return a 1x1 scalar");
    tape.backward(out);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }
  if (options.tamper) options.tamper(analytic);

  GradCheckReport report;
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double orig = probe[k][i];
      probe[k][i] = orig + options.h;
      const double fp = evaluate(fn, probe);
      probe[k][i] = orig - options.h;
      const double fm = evaluate(fn, probe);
      probe[k][i] = orig;
      const double numeric = (fp - fm) / (2.0 * options.h);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.scale_floor});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(a - numeric) / denom);
      ++report.checked;
    }
  }
  report.passed = report.max_rel_error < options.tol;
  return report;
}

GradCheckReport grad_check_params(const std::function<Var<double>(Tape<double>&)>& fn,
                                  std::span<Parameter<double>* const> params,
                                  const GradCheckOptions& options) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    const Var<double> out = fn(tape);
    if (out.value().size() != 1) throw ShapeError("grad_check: function must return a 1x1 scalar");
    tape.backward(out);
  }
  std::vector<Tensor<double>> analytic;
  for (auto* p : params) analytic.push_back(p->grad);
  if (options.tamper) options.tamper(analytic);

  auto eval = [&fn] {
    Tape<double> tape;
    return fn(tape).value()[0];
  };
  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k]->value.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + options.h;
      const double fp = eval();
      values[i] = orig - options.h;
      const double fm = eval();
      values[i] = orig;
      const double numeric = (fp - fm) / (2.0 * options.h);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.scale_floor});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(a - numeric) / denom);
      ++report.checked;
    }
  }
  report.passed = report.max_rel_error < options.tol;
  return report;
}

}  // namespace schemanet
