#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>

#include "rvsl/autodiff.hpp"

namespace rvsl::ad {

/// Builds a scalar root on a fresh graph. Parameters the recipe binds with
/// Graph::param (trainable) are the coordinates being checked.
using Recipe = std::function<Var(Graph&)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-6;
  /// Coordinates probed per parameter tensor; 0 probes every element.
  std::size_t max_probes_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool passed = false;
  std::size_t probes = 0;
  /// Probes skipped because +/- step crossed a kink (relu, min, clamp, ...).
  std::size_t skipped_kinks = 0;
  /// "<param>[<index>]" of the worst coordinate.
  std::string worst;
  /// Set when a probe produced a non-finite loss: names the offending node.
  std::string failure;
};

/// Compares reverse-mode gradients of `recipe` against central finite
/// differences over every trainable parameter it binds. Parameter values are
/// restored afterwards.
GradCheckReport grad_check(const Recipe& recipe, double tolerance, GradCheckOptions options = {});

}  // namespace rvsl::ad
