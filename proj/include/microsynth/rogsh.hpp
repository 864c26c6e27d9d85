#pragma once

// Reduced-order generalized spherical harmonics for cubic crystal symmetry.
//
// Three symmetrized GSH functions are retained:
//   channel 0: Re(T4^{-4,1}),  l = 4
//   channel 1: T4^{0,1},       l = 4
//   channel 2: T12^{0,2},      l = 12
// A single orientation g maps to coefficients (2l+1) * T*(g), each scaled by a
// fixed normalizer so the channel lies in [-1, 1].

#include <array>
#include <vector>

#include <Eigen/Core>

#include "microsynth/field.hpp"

namespace microsynth::rogsh {

/// Bunge (intrinsic ZXZ) Euler angles in radians.
struct EulerZXZ {
  double phi1 = 0.0;
  double Phi = 0.0;
  double phi2 = 0.0;
};

using RogshVector = std::array<double, 3>;

inline constexpr std::array<int, 3> kDegrees{4, 4, 12};

/// Max over SO(3) of |(2l+1) T| per channel. A 200^3 Euler grid followed by
/// local simplex refinement places every maximum at the identity orientation,
/// so the constants are the closed forms (2l+1) * |T(0,0,0)|:
///   9 * sqrt(30)/12,  9 * sqrt(21)/6,  25 * 2048 * sqrt(166305594)/40304640.
/// tools/rogsh_normalizers reproduces the search.
extern const RogshVector kNormalizers;

/// Wraps phi1, phi2 into [0, 2pi) and Phi into [0, pi].
EulerZXZ normalize(const EulerZXZ& g);

/// Unnormalized basis values [Re(T4^{-4,1}), T4^{0,1}, T12^{0,2}].
RogshVector eval_basis(const EulerZXZ& g);

/// Normalized coefficients (2l+1) T*(g) / N. The retained functions are real,
/// so conjugation is the identity.
RogshVector euler_to_coeffs(const EulerZXZ& g);

/// Active rotation matrix Rz(phi1) Rx(Phi) Rz(phi2).
Eigen::Matrix3d to_matrix(const EulerZXZ& g);
EulerZXZ from_matrix(const Eigen::Matrix3d& r);

/// The 24 proper rotations of the cube (signed permutation matrices, det +1).
const std::vector<Eigen::Matrix3d>& cubic_rotations();

/// Crystal symmetry acts on the right of the active rotation: R -> R * S.
EulerZXZ apply_crystal_symmetry(const EulerZXZ& g, const Eigen::Matrix3d& s);

/// Orientation grid laid out x-fastest like Field3.
struct EulerGrid {
  Dims dims;
  std::vector<EulerZXZ> values;
};

Field3 field_euler_to_rogsh(const EulerGrid& grid);

}  // namespace microsynth::rogsh
