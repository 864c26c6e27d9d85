#include "microsynth/rogsh.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "microsynth/errors.hpp"

namespace microsynth::rogsh {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

const RogshVector kNormalizers{
    9.0 * std::sqrt(30.0) / 12.0,
    9.0 * std::sqrt(21.0) / 6.0,
    25.0 * 2048.0 * std::sqrt(166305594.0) / 40304640.0,
};

EulerZXZ normalize(const EulerZXZ& g) {
  auto wrap = [](double a) {
    double w = std::fmod(a, kTwoPi);
    if (w < 0.0) w += kTwoPi;
    return w >= kTwoPi ? 0.0 : w;
  };
  EulerZXZ out = g;
  // Phi outside [0, pi] folds back as (phi1 + pi, -Phi, phi2 + pi).
  double big = std::fmod(g.Phi, kTwoPi);
  if (big < 0.0) big += kTwoPi;
  if (big > std::numbers::pi) {
    out.Phi = kTwoPi - big;
    out.phi1 = g.phi1 + std::numbers::pi;
    out.phi2 = g.phi2 + std::numbers::pi;
  } else {
    out.Phi = big;
  }
  out.phi1 = wrap(out.phi1);
  out.phi2 = wrap(out.phi2);
  return out;
}

RogshVector eval_basis(const EulerZXZ& g) {
  const double c = std::cos(g.Phi);
  const double s = std::sin(g.Phi);
  const double cm = c - 1.0;
  const double cp = c + 1.0;
  const double cm2 = cm * cm, cp2 = cp * cp;
  const double c2 = c * c, c4 = c2 * c2, c6 = c4 * c2, c8 = c4 * c4, c10 = c8 * c2, c12 = c6 * c6;
  const double s2 = s * s, s4 = s2 * s2;

  const double t4m4 =
      std::sqrt(30.0) / 192.0 *
      ((14.0 * cm2 * std::cos(4.0 * g.phi1) + cp2 * std::cos(4.0 * g.phi1 + 4.0 * g.phi2)) * cp2 +
       cm2 * cm2 * std::cos(4.0 * g.phi1 - 4.0 * g.phi2));

  const double t40 = std::sqrt(21.0) / 48.0 * (5.0 * s4 * std::cos(4.0 * g.phi2) + 35.0 * c4 - 30.0 * c2 + 3.0);

  const double cmp = cm2 * cp2;  // (c-1)^2 (c+1)^2
  const double t120 =
      std::sqrt(166305594.0) / 40304640.0 *
      (1025.0 * cmp * cmp * cmp * std::cos(12.0 * g.phi2) +
       66.0 * cmp * cmp * (161.0 * s4 - 280.0 * s2 + 120.0) * std::cos(8.0 * g.phi2) +
       99.0 * cmp * (7429.0 * c8 - 9044.0 * c6 + 3230.0 * c4 - 340.0 * c2 + 5.0) * std::cos(4.0 * g.phi2) +
       1352078.0 * c12 - 3879876.0 * c10 + 4157010.0 * c8 - 2042040.0 * c6 + 450450.0 * c4 - 36036.0 * c2 +
       462.0);

  return {t4m4, t40, t120};
}

RogshVector euler_to_coeffs(const EulerZXZ& g) {
  RogshVector t = eval_basis(g);
  for (std::size_t b = 0; b < 3; ++b) {
    t[b] *= (2.0 * kDegrees[b] + 1.0) / kNormalizers[b];
  }
  return t;
}

Eigen::Matrix3d to_matrix(const EulerZXZ& g) {
  using Eigen::AngleAxisd;
  using Eigen::Vector3d;
  return (AngleAxisd(g.phi1, Vector3d::UnitZ()) * AngleAxisd(g.Phi, Vector3d::UnitX()) *
          AngleAxisd(g.phi2, Vector3d::UnitZ()))
      .toRotationMatrix();
}

EulerZXZ from_matrix(const Eigen::Matrix3d& r) {
  // R = Rz(a) Rx(b) Rz(c): R(2,2) = cos b, R(0,2) = sin a sin b, R(1,2) = -cos a sin b,
  // R(2,0) = sin b sin c, R(2,1) = sin b cos c.
  const double cb = std::clamp(r(2, 2), -1.0, 1.0);
  EulerZXZ g;
  const double sb = std::hypot(r(0, 2), r(1, 2));
  if (sb > 1e-12) {
    g.Phi = std::atan2(sb, r(2, 2));
    g.phi1 = std::atan2(r(0, 2), -r(1, 2));
    g.phi2 = std::atan2(r(2, 0), r(2, 1));
  } else if (cb > 0.0) {
    // Rz(a + c): only the sum is defined.
    g.Phi = 0.0;
    g.phi1 = std::atan2(r(1, 0), r(0, 0));
    g.phi2 = 0.0;
  } else {
    // Rz(a) Rx(pi) Rz(c) depends on a - c.
    g.Phi = std::numbers::pi;
    g.phi1 = std::atan2(r(1, 0), r(0, 0));
    g.phi2 = 0.0;
  }
  return normalize(g);
}

const std::vector<Eigen::Matrix3d>& cubic_rotations() {
  static const std::vector<Eigen::Matrix3d> group = [] {
    std::vector<Eigen::Matrix3d> out;
    std::array<int, 3> perm{0, 1, 2};
    do {
      for (int signs = 0; signs < 8; ++signs) {
        Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
        for (int i = 0; i < 3; ++i) m(i, perm[i]) = (signs >> i) & 1 ? -1.0 : 1.0;
        if (m.determinant() > 0.0) out.push_back(m);
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return out;
  }();
  return group;
}

EulerZXZ apply_crystal_symmetry(const EulerZXZ& g, const Eigen::Matrix3d& s) {
  return from_matrix(to_matrix(g) * s);
}

Field3 field_euler_to_rogsh(const EulerGrid& grid) {
  grid.dims.validate();
  if (grid.values.size() != grid.dims.voxels()) {
    throw DimensionError("orientation grid has " + std::to_string(grid.values.size()) + " entries, expected " +
                         std::to_string(grid.dims.voxels()));
  }
  Field3 out(3, grid.dims);
  const std::size_t n = grid.dims.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    const RogshVector v = euler_to_coeffs(grid.values[i]);
    for (int b = 0; b < 3; ++b) out.data()[static_cast<std::size_t>(b) * n + i] = v[static_cast<std::size_t>(b)];
  }
  return out;
}

}  // namespace microsynth::rogsh
