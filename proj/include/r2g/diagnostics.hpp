// SPDX-License-Identifier: Apache-2.0
//
// Small fixtures and self-checks shared by the CLI and the test suites.
#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "r2g/gradcheck.hpp"
#include "r2g/model.hpp"
#include "r2g/synthetic.hpp"

namespace r2g {

struct TinyShape {
  std::size_t frames = 4;
  std::size_t tokens = 3;
  std::size_t patches = 4;
  std::size_t hidden = 8;
  std::size_t steps = 2;  // K
  std::size_t feature_dim = 8;
};

/// Model config at tiny scale: widths from `shape`, two heads, pyramid depth
/// as large as the frame count allows (at most 3), DropPath 0.
ModelConfig tiny_model_config(const TinyShape& shape);
/// Synthetic sample with moment and saliency labels at tiny scale.
Example tiny_example(const TinyShape& shape, std::uint64_t seed);

/// Gradient check of one component: "r2block", "calibration", "heads" or
/// "full" (block, calibration and heads under the joint loss on a batch of
/// two samples). Gates are moved off zero so every path carries gradient.
GradCheckReport gradcheck_module(std::string_view module, const TinyShape& shape = {}, std::uint64_t seed = 11);
std::vector<std::string> gradcheck_modules();

/// Learnable scalars grouped by the first two name components.
std::vector<std::pair<std::string, std::size_t>> param_breakdown(const ParamList& params);

}  // namespace r2g
