#pragma once

// Multi-output spectral mixture (MOSM) kernel:
//
//   k_{bg}(r) = sum_q alpha_{bg}^q exp(-1/2 (r+theta)^T A (r+theta)) cos((r+theta)^T mean + phase)
//
// with the cross-channel parameters (A, mean, weight, theta, phase, alpha)_{bg}
// derived from per-channel ones so every parameter set yields a valid
// (positive semidefinite) multi-output covariance. Distances use the
// [-pi, pi)^3 domain convention regardless of grid resolution.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "microsynth/field.hpp"
#include "microsynth/grids.hpp"

namespace microsynth::mosm {

/// One mixture element of one channel.
struct Component {
  double weight = 0.0;
  Eigen::Matrix3d precision = Eigen::Matrix3d::Identity();  // A, SPD, 1/length^2
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();           // spatial frequency
  Eigen::Vector3d delay = Eigen::Vector3d::Zero();          // length
  double phase = 0.0;                                       // radians, [0, 2pi)
};

struct MosmParams {
  int channels = 0;
  int mixtures = 0;
  std::vector<Component> components;  // [channel * mixtures + q]

  MosmParams() = default;
  MosmParams(int channels, int mixtures);

  Component& at(int channel, int q) { return components[static_cast<std::size_t>(channel * mixtures + q)]; }
  const Component& at(int channel, int q) const {
    return components[static_cast<std::size_t>(channel * mixtures + q)];
  }
  /// Throws ValidationError on non-SPD precision, non-finite values or bad sizes.
  void validate() const;
};

/// Cross-channel parameters of mixture q for channel pair (beta, gamma).
struct CrossParams {
  Eigen::Matrix3d precision;
  Eigen::Vector3d mean;
  double weight = 0.0;
  Eigen::Vector3d delay;
  double phase = 0.0;
  double amplitude = 0.0;  // alpha = w (2 pi)^{3/2} |A|^{1/2}
};

/// Throws DegenerateError when A_beta + A_gamma is singular.
CrossParams derive_cross_params(const MosmParams& params, int beta, int gamma, int q);

/// Full H x H kernel matrix at offset r.
Eigen::MatrixXd eval_kernel(const MosmParams& params, const Eigen::Vector3d& r);
double eval_kernel_entry(const MosmParams& params, int beta, int gamma, const Eigen::Vector3d& r);

/// Physical offset of lattice index (ix, iy, iz): spacing 2 pi / D per axis,
/// indices >= D/2 wrap to negative offsets so r lies in [-pi, pi)^3.
Eigen::Vector3d lattice_offset(const Dims& dims, std::int64_t ix, std::int64_t iy, std::int64_t iz);

/// Reference row k_{0 gamma} on the offset lattice (r = 0 at index 0).
CovarianceGrid kernel_to_grid(const MosmParams& params, const Dims& dims);
/// All H x H ordered pairs.
CovarianceGrid kernel_to_full_grid(const MosmParams& params, const Dims& dims);

struct Range {
  double min = 0.0;
  double max = 0.0;
};

/// Box bounds for LHS. Precision matrices are sampled diagonal: each diagonal
/// entry is a^2 with |a| drawn from `precision_root`.
struct ParamBounds {
  Range precision_root{1.5, 5.0};
  Range mean{-5.0, 5.0};
  Range weight{-0.02, 0.02};
  Range delay{-0.5, 0.5};
  Range phase{0.0, 6.283185307179586};

  void validate() const;
};

/// Free scalars per parameter set under diagonal sampling: 11 per channel per mixture.
inline constexpr int kScalarsPerComponent = 11;
inline int free_parameter_count(int channels, int mixtures) { return kScalarsPerComponent * channels * mixtures; }

/// Latin hypercube over the box: every scalar dimension is split into n equal
/// bins with exactly one sample per bin. Dimension order per component:
/// weight, a_x, a_y, a_z, mean_xyz, delay_xyz, phase.
std::vector<MosmParams> sample_params_lhs(const ParamBounds& bounds, int n, int mixtures, int channels,
                                          std::uint64_t seed);

/// Flattens a parameter set into the LHS coordinate order above (diagonal A only).
std::vector<double> lhs_coordinates(const MosmParams& params);

struct KernelVerdict {
  bool accepted = true;
  std::string reason;             // empty when accepted
  double boundary_ratio = 0.0;    // max |k| on the outer shell / max_gamma |k_{0gamma}(0)|
  double probe_max_abs = 0.0;     // max |x| of the probe field, 0 without a probe
};

inline constexpr double kDefaultPeriodicityTol = 1e-3;

/// Rejects covariances that have not decayed at the outer shell of offsets
/// (max |r_d| along some axis) and probe fields leaving [-1, 1].
KernelVerdict validate_kernel(const CovarianceGrid& cov, double periodicity_tol = kDefaultPeriodicityTol,
                              const Field3* probe = nullptr);

/// Analytic cross-spectral density matrix S(omega) implied by the mixture.
Eigen::MatrixXcd cross_spectral_matrix(const MosmParams& params, const Eigen::Vector3d& omega);

struct SpectralCheck {
  double min_ratio = 0.0;           // min over frequencies of lambda_min / lambda_max
  double max_hermitian_defect = 0.0;
};

/// Evaluates S(omega) on an n^3 frequency grid over [-omega_max, omega_max]^3.
SpectralCheck check_cross_spectral_psd(const MosmParams& params, int n = 9, double omega_max = 12.0);

}  // namespace microsynth::mosm
