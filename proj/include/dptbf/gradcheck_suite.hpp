// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Finite-difference checks of every differentiable block in double precision.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dptbf/common.hpp"
#include "dptbf/gradcheck.hpp"

namespace dptbf {

struct BlockCheck {
  std::string name;
  double max_rel_error = 0.0;
  Index checked = 0;  // number of compared derivatives
  bool passed = false;
};

/// Runs all blocks: primitives, GRU (T = 3), attention (Lq = 4, Lk = 5), a
/// tiny full network (D = 8, M = 2, F = 5, T = 6) and the composite loss
/// through the beamformer and inverse STFT.
std::vector<BlockCheck> run_gradcheck_suite(std::uint64_t seed = 1, const ad::GradcheckOptions& opts = {});

/// Names accepted by run_gradcheck_block.
std::vector<std::string> gradcheck_block_names();
BlockCheck run_gradcheck_block(const std::string& name, std::uint64_t seed = 1,
                               const ad::GradcheckOptions& opts = {});

}  // namespace dptbf
