// SPDX-License-Identifier: Apache-2.0
#include "r2g/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "r2g/errors.hpp"

namespace r2g {
namespace {
thread_local bool g_deterministic = false;
}

DeterministicScope::DeterministicScope() : prev_(g_deterministic) { g_deterministic = true; }
DeterministicScope::~DeterministicScope() { g_deterministic = prev_; }
bool DeterministicScope::active() { return g_deterministic; }

GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn, std::vector<NamedTensor> params,
                                  double eps, Stencil stencil) {
  for (auto& [name, p] : params) {
    if (!p.is_leaf() || !p.requires_grad()) throw ContractError("gradcheck parameter " + name + " is not a trainable leaf");
    p.zero_grad();
  }
  Tensor loss = loss_fn();
  const double base = loss.item();
  loss.backward();

  {
    NoGradGuard no_grad;
    const double again = loss_fn().item();
    if (again != base) {
      throw DeterminismError("loss function is not deterministic: " + std::to_string(base) + " vs " +
                             std::to_string(again));
    }
  }

  GradCheckReport report;
  report.noise_floor = 64.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(base), 1.0) / eps;
  NoGradGuard no_grad;
  for (auto& [name, p] : params) {
    std::vector<double> analytic = p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                                : std::vector<double>(p.numel(), 0.0);
    auto values = p.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      auto at = [&](double offset) {
        values[i] = orig + offset;
        return loss_fn().item();
      };
      double numeric = 0.0;
      if (stencil == Stencil::ThreePoint) {
        numeric = (at(eps) - at(-eps)) / (2.0 * eps);
      } else {
        numeric = (-at(2.0 * eps) + 8.0 * at(eps) - 8.0 * at(-eps) + at(-2.0 * eps)) / (12.0 * eps);
      }
      values[i] = orig;
      ++report.entries_checked;
      if (std::abs(analytic[i]) < report.noise_floor && std::abs(numeric) < report.noise_floor) {
        ++report.zero_entries;
        continue;
      }
      const double rel = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
      if (report.worst_param.empty() || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = name;
        report.worst_index = i;
        report.worst_analytic = analytic[i];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace r2g
