#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "schemanet/tape.hpp"

namespace schemanet {

/// Scalar-valued function of tape variables, evaluated in 64-bit.
using GradCheckFn = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-4;
  /// Denominator floor of the relative error, so near-zero components are
  /// compared absolutely.
  double scale_floor = 1e-3;
  /// Applied to the analytic gradients before comparison (negative controls).
  std::function<void(std::vector<Tensor<double>>&)> tamper;
};

/// Compares tape gradients of `fn` at `inputs` with central differences.
/// Relative error per component is |a - n| / max(|a|, |n|, scale_floor).
/// Throws NumericError when the function produces non-finite values.
GradCheckReport grad_check(const GradCheckFn& fn, const std::vector<Tensor<double>>& inputs,
                           const GradCheckOptions& options = {});

/// Same comparison for gradients with respect to parameters bound inside
/// `fn` via Tape::param. Parameter values are perturbed in place and
/// restored; their `grad` fields are overwritten.
GradCheckReport grad_check_params(const std::function<Var<double>(Tape<double>&)>& fn,
                                  std::span<Parameter<double>* const> params,
                                  const GradCheckOptions& options = {});

struct GradCheckEntry {
  std::string name;
  GradCheckReport report;
};

/// Every differentiable primitive on random 64-bit inputs, plus the
/// composite layers and the one-assimilation training loss on a
/// 3-object / 2-predicate graph. `tamper` perturbs the analytic gradients
/// so that every entry must fail.
std::vector<GradCheckEntry> gradcheck_suite(std::uint64_t seed, bool tamper = false);

}  // namespace schemanet
