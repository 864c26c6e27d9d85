#pragma once

#include <cstdint>
#include <optional>

#include "microsynth/grids.hpp"
#include "microsynth/mosm.hpp"

namespace microsynth::mosm {

struct FitOptions {
  int restarts = 32;
  /// Total optimizer iteration budget across all restarts.
  int max_evaluations = 20000;
  int max_iterations_per_start = 400;
  std::uint64_t seed = 0;
  /// Box for drawing restart points.
  ParamBounds bounds{};
  /// Used as the first start when present.
  std::optional<MosmParams> warm_start;
};

struct FitResult {
  MosmParams params;
  double residual = 0.0;  // mean squared grid residual
  double energy = 0.0;    // mean squared empirical value
  int restarts_run = 0;
  /// False when the best start hit its iteration cap or the budget ran out.
  bool converged = false;
};

/// Least-squares fit of a Q-mixture kernel to a covariance grid over all of
/// its stored channel pairs. Precision matrices are full SPD through a
/// log-Cholesky parameterization.
FitResult fit_mosm(const CovarianceGrid& empirical, int mixtures, const FitOptions& options = {});

}  // namespace microsynth::mosm
