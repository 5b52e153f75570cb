#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "stprog/graph.hpp"

namespace stprog {

/// Builds a scalar loss from leaf variables created over the given inputs.
/// Must be deterministic: it is re-evaluated many times under perturbation.
using ScalarBuilder = std::function<Var(Graph&, const std::vector<Var>&)>;

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t probes = 0;
};

/// Central-difference gradient check. For each probed coordinate reports
/// |g_analytic - g_numeric| / max(1, |g_numeric|) and returns the maximum.
/// With max_probes_per_input == 0 every coordinate is probed; otherwise a
/// deterministic random subset of that size per input (probe_seed).
/// Throws NumericError if a numeric gradient is non-finite.
GradCheckReport grad_check(const ScalarBuilder& f,
                           const std::vector<Tensor>& inputs, double eps = 1e-5,
                           std::size_t max_probes_per_input = 0,
                           std::uint64_t probe_seed = 0);

}  // namespace stprog
