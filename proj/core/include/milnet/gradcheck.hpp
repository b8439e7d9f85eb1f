#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "milnet/autodiff.hpp"

namespace milnet {

/// |a - n| / max(|a|, |n|, floor). The floor turns the check absolute near zero.
double relative_error(double analytic, double numeric, double floor = 1e-4);

struct GradCheckReport {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose stencil crossed a ReLU/pool/sort/clamp boundary
  std::size_t redraws = 0;  // head suite: draws discarded because a tensor had no smooth coordinate
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

using ScalarBuilder = std::function<Var(Graph&, std::span<const Var>)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  double floor = 1e-4;
  /// 0 checks every coordinate; otherwise this many random coordinates per input.
  std::size_t coords_per_input = 0;
  /// Skip coordinates where x - step or x + step has a different branch
  /// signature than x; central differences are meaningless across a kink.
  bool smoothness_guard = false;
  std::uint64_t seed = 0;
};

/// Compares reverse-mode gradients of `build` with central differences of its
/// forward value. The forward-only oracle never reads gradients.
GradCheckReport check_gradients(const std::string& name, const ScalarBuilder& build, const std::vector<Tensor>& inputs,
                                const GradCheckOptions& options);

/// Every differentiable op on random inputs.
std::vector<GradCheckReport> run_op_gradchecks(std::uint64_t seed);

/// Each MIL head composed with a backbone preset on a 2-image batch, one report
/// per head and draw. Coordinates whose stencil crosses a kink are skipped; a
/// draw that leaves some parameter tensor without a smooth coordinate is
/// replaced (at most 4 times) and the report fails if none succeeds.
std::vector<GradCheckReport> run_head_gradchecks(std::uint64_t seed, std::size_t draws, const std::string& preset = "desk",
                                                 double tolerance = 1e-5);

}  // namespace milnet
