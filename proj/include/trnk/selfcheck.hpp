// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

// Finite-difference checks of the lattice losses and one tiny model per
// architecture family.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trnk/network.hpp"

namespace trnk {

struct GradCheckCase {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t parameters = 0;
};

/// A model small enough that every coordinate can be perturbed.
ModelConfig tiny_model_config(Architecture a);

/// Runs the CTC and transducer lattice losses on random logits, then every
/// family's full training loss.
std::vector<GradCheckCase> run_gradient_checks(std::uint64_t seed);

}  // namespace trnk
