// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "tfcn/tensor.h"

namespace tfcn {

/// One block of coordinates to probe. `values` is perturbed in place (and
/// restored) while the objective is re-evaluated; `analytic` holds the
/// gradient under test for the same coordinates.
struct GradProbe {
  std::string name;
  std::span<double> values;
  std::span<const double> analytic;
};

struct GradCheckOptions {
  double step = 1e-3;
  double tolerance = 1e-3;
  /// 0 checks every coordinate; otherwise a seeded random subset.
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 0;
  /// A coordinate that fails at `step` without looking like a kink is
  /// re-measured at 10×, 100×, ... this many times and keeps its best
  /// agreement. Tiny gradients drown in round-off at small steps.
  int escalations = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose one-sided differences disagree, i.e. the step
  /// straddles a PReLU kink; excluded from the maximum.
  std::size_t kinks_skipped = 0;
  /// Coordinates that only agreed at an escalated step.
  std::size_t escalated = 0;
  std::string worst;

  bool passed(double tolerance) const {
    return checked > 0 && max_relative_error < tolerance;
  }
};

/// |a − n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

/// Central-difference check of `analytic` against `objective`. The objective
/// reads the probed values in place. A non-finite objective value is
/// reported as NonFiniteError naming the coordinate.
GradCheckReport grad_check(const std::function<double()>& objective,
                           std::span<GradProbe> probes,
                           const GradCheckOptions& options = {});

/// Throws NonFiniteError naming `op` if any element is NaN or infinite.
template <typename T>
void require_finite(const BasicTensor<T>& t, const char* op);

}  // namespace tfcn
