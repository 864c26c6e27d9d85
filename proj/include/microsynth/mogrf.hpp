#pragma once

// Stationary periodic multi-output Gaussian random fields sampled through the
// reference-channel spectral construction: the reference channel is coloured
// white noise, every other channel is a linear filter of it.

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "microsynth/fft.hpp"
#include "microsynth/field.hpp"
#include "microsynth/grids.hpp"

namespace microsynth::mogrf {

/// Regularizer of the transfer function F^{0g} / (F^{00} + eps).
inline constexpr double kTransferEpsilon = 1e-12;

struct MogrfSpec {
  std::vector<double> means;  // one per channel; channels >= 1 default to 0
  CovarianceGrid covrow;      // reference row (0, g), g = 0..H-1

  int channels() const { return covrow.channels; }
  const Dims& dims() const { return covrow.dims; }
  void validate() const;
};

/// Zero-mean spec from a reference-row covariance.
MogrfSpec make_spec(CovarianceGrid covrow, std::vector<double> means = {});

class Sampler {
 public:
  /// Throws DegenerateError when the reference spectrum is zero everywhere
  /// outside the zero frequency.
  explicit Sampler(MogrfSpec spec);

  const MogrfSpec& spec() const { return spec_; }
  /// Share of sum |F^{00}| carried by negative values clamped to zero.
  double clamped_mass_fraction() const { return clamped_fraction_; }

  Field3 sample(std::mt19937_64& rng) const;
  /// Real and imaginary parts of one complex draw: two independent samples.
  std::pair<Field3, Field3> sample_pair(std::mt19937_64& rng) const;

  /// Fills channels g >= 1 of `field` from its reference channel.
  void apply_transfer(Field3& field) const;

 private:
  MogrfSpec spec_;
  RealFft3 rfft_;
  ComplexFft3 cfft_;
  std::vector<double> amplitude_;                 // full spectrum, sqrt(lambda / S), 0 at DC
  std::vector<std::vector<Complex>> transfer_;    // half spectrum per channel g >= 1
  double clamped_fraction_ = 0.0;

  Field3 assemble(const std::vector<Complex>& y, bool imaginary) const;
};

Field3 sample(const MogrfSpec& spec, std::mt19937_64& rng);

struct CovCheck {
  double max_rel_error = 0.0;  // sup |empirical - target| / sup |target|
  CovarianceGrid empirical;
};

/// Mean reference-row covariance of n samples compared to the spec's row.
CovCheck empirical_cov_check(const MogrfSpec& spec, int n_samples, std::uint64_t seed);

}  // namespace microsynth::mogrf
