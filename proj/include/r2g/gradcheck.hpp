// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "r2g/tensor.hpp"

namespace r2g {

using NamedTensor = std::pair<std::string, Tensor>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
  /// Entries whose analytic and numeric values both lie below the roundoff
  /// floor of the difference quotient; relative error is undefined there.
  std::size_t zero_entries = 0;
  double noise_floor = 0.0;
};

/// Central-difference stencils: f'(x) from x +- h, or from x +- h, x +- 2h
/// (fourth-order accurate, which permits a larger h and so less roundoff).
enum class Stencil { ThreePoint, FivePoint };

/// Compares reverse-mode gradients of the scalar `loss_fn` with central
/// differences, perturbing every entry of every parameter in place.
/// Relative error is |a - c| / (|a| + |c| + 1e-12), taken over entries
/// where either side exceeds the roundoff floor 64 * eps_mach * max(|f|, 1) / h
/// of the difference quotient. Entries below the floor on both sides are
/// counted as zero gradients.
///
/// `loss_fn` must be deterministic; it is evaluated twice at the base point
/// and a mismatch raises DeterminismError.
GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn, std::vector<NamedTensor> params,
                                  double eps = 1e-5, Stencil stencil = Stencil::ThreePoint);

/// While alive, stochastic layers (DropPath) act as identity even in
/// training mode. Nests.
class DeterministicScope {
 public:
  DeterministicScope();
  ~DeterministicScope();
  DeterministicScope(const DeterministicScope&) = delete;
  DeterministicScope& operator=(const DeterministicScope&) = delete;
  static bool active();

 private:
  bool prev_;
};

}  // namespace r2g
