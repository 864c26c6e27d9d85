#include "microsynth/mosm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "microsynth/errors.hpp"

namespace microsynth::mosm {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
const double kGaussNorm = std::pow(kTwoPi, 1.5);  // (2 pi)^{n/2}, n = 3

bool is_spd(const Eigen::Matrix3d& m) {
  if (!m.allFinite() || (m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + m.cwiseAbs().maxCoeff())) {
    return false;
  }
  Eigen::LLT<Eigen::Matrix3d> llt(m);
  return llt.info() == Eigen::Success;
}
}  // namespace

MosmParams::MosmParams(int channels_, int mixtures_) : channels(channels_), mixtures(mixtures_) {
  if (channels_ < 1 || mixtures_ < 1) throw ValidationError("MOSM needs at least one channel and one mixture");
  components.resize(static_cast<std::size_t>(channels_ * mixtures_));
}

void MosmParams::validate() const {
  if (channels < 1 || mixtures < 1) throw ValidationError("MOSM needs at least one channel and one mixture");
  if (components.size() != static_cast<std::size_t>(channels * mixtures)) {
    throw ValidationError("MOSM component count does not match channels x mixtures");
  }
  for (const auto& c : components) {
    if (!std::isfinite(c.weight) || !std::isfinite(c.phase) || !c.mean.allFinite() || !c.delay.allFinite()) {
      throw ValidationError("MOSM parameters must be finite");
    }
    if (!is_spd(c.precision)) throw ValidationError("MOSM precision matrix is not symmetric positive definite");
  }
}

CrossParams derive_cross_params(const MosmParams& params, int beta, int gamma, int q) {
  if (beta < 0 || beta >= params.channels || gamma < 0 || gamma >= params.channels) {
    throw ValidationError("channel index out of range");
  }
  if (q < 0 || q >= params.mixtures) throw ValidationError("mixture index out of range");
  const Component& b = params.at(beta, q);
  const Component& g = params.at(gamma, q);

  const Eigen::Matrix3d sum = b.precision + g.precision;
  Eigen::FullPivLU<Eigen::Matrix3d> lu(sum);
  if (!lu.isInvertible() || std::abs(sum.determinant()) < 1e-300) {
    throw DegenerateError("A_beta + A_gamma is singular for channels (" + std::to_string(beta) + "," +
                          std::to_string(gamma) + "), mixture " + std::to_string(q));
  }
  const Eigen::Matrix3d sum_inv = lu.inverse();

  CrossParams out;
  if (beta == gamma) {
    // The general formulas reduce to these; keep them exact.
    out.precision = b.precision;
    out.mean = b.mean;
    out.weight = b.weight * b.weight;
  } else {
    out.precision = 2.0 * b.precision * sum_inv * g.precision;
    out.precision = 0.5 * (out.precision + out.precision.transpose());
    // Mean of the product of the two square-root spectral Gaussians. The
    // matrix order matters once the precisions do not commute.
    out.mean = g.precision * sum_inv * b.mean + b.precision * sum_inv * g.mean;
    const Eigen::Vector3d dm = b.mean - g.mean;
    out.weight = b.weight * g.weight * std::exp(-0.25 * dm.dot(sum_inv * dm));
  }
  out.delay = b.delay - g.delay;
  out.phase = b.phase - g.phase;
  const double det = out.precision.determinant();
  if (!(det > 0.0)) throw DegenerateError("derived cross precision is not positive definite");
  out.amplitude = out.weight * kGaussNorm * std::sqrt(det);
  return out;
}

namespace {

double eval_cross(const CrossParams& c, const Eigen::Vector3d& r) {
  const Eigen::Vector3d tau = r + c.delay;
  return c.amplitude * std::exp(-0.5 * tau.dot(c.precision * tau)) * std::cos(tau.dot(c.mean) + c.phase);
}

std::vector<CrossParams> cross_for_pair(const MosmParams& params, int beta, int gamma) {
  std::vector<CrossParams> out;
  out.reserve(static_cast<std::size_t>(params.mixtures));
  for (int q = 0; q < params.mixtures; ++q) out.push_back(derive_cross_params(params, beta, gamma, q));
  return out;
}

CovarianceGrid grid_for_pairs(const MosmParams& params, const Dims& dims, std::vector<ChannelPair> pairs) {
  params.validate();
  dims.validate();
  CovarianceGrid out;
  out.dims = dims;
  out.channels = params.channels;
  out.pairs = std::move(pairs);
  for (const auto& p : out.pairs) {
    const auto cross = cross_for_pair(params, p.first, p.second);
    std::vector<double> values(dims.voxels());
    for (std::int64_t z = 0; z < dims.z; ++z) {
      for (std::int64_t y = 0; y < dims.y; ++y) {
        for (std::int64_t x = 0; x < dims.x; ++x) {
          const Eigen::Vector3d r = lattice_offset(dims, x, y, z);
          double sum = 0.0;
          for (const auto& c : cross) sum += eval_cross(c, r);
          values[dims.index(x, y, z)] = sum;
        }
      }
    }
    out.values.push_back(std::move(values));
  }
  return out;
}

}  // namespace

double eval_kernel_entry(const MosmParams& params, int beta, int gamma, const Eigen::Vector3d& r) {
  double sum = 0.0;
  for (int q = 0; q < params.mixtures; ++q) sum += eval_cross(derive_cross_params(params, beta, gamma, q), r);
  return sum;
}

Eigen::MatrixXd eval_kernel(const MosmParams& params, const Eigen::Vector3d& r) {
  params.validate();
  Eigen::MatrixXd k(params.channels, params.channels);
  for (int b = 0; b < params.channels; ++b) {
    for (int g = 0; g < params.channels; ++g) k(b, g) = eval_kernel_entry(params, b, g, r);
  }
  return k;
}

Eigen::Vector3d lattice_offset(const Dims& dims, std::int64_t ix, std::int64_t iy, std::int64_t iz) {
  return {kTwoPi * static_cast<double>(signed_offset(ix, dims.x)) / static_cast<double>(dims.x),
          kTwoPi * static_cast<double>(signed_offset(iy, dims.y)) / static_cast<double>(dims.y),
          kTwoPi * static_cast<double>(signed_offset(iz, dims.z)) / static_cast<double>(dims.z)};
}

CovarianceGrid kernel_to_grid(const MosmParams& params, const Dims& dims) {
  return grid_for_pairs(params, dims, select_pairs(params.channels, PairSelection::ReferenceRow));
}

CovarianceGrid kernel_to_full_grid(const MosmParams& params, const Dims& dims) {
  return grid_for_pairs(params, dims, select_pairs(params.channels, PairSelection::Full));
}

void ParamBounds::validate() const {
  for (const Range* r : {&precision_root, &mean, &weight, &delay, &phase}) {
    if (!std::isfinite(r->min) || !std::isfinite(r->max) || r->min > r->max) {
      throw ValidationError("parameter bounds need finite min <= max");
    }
  }
  if (precision_root.min <= 0.0) throw ValidationError("precision bounds must be strictly positive");
}

std::vector<MosmParams> sample_params_lhs(const ParamBounds& bounds, int n, int mixtures, int channels,
                                          std::uint64_t seed) {
  bounds.validate();
  if (n < 1) throw ValidationError("LHS needs n >= 1");
  if (mixtures < 1 || channels < 1) throw ValidationError("LHS needs at least one channel and mixture");
  const int dims = free_parameter_count(channels, mixtures);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // unit[d][i]: stratified coordinate of sample i in dimension d.
  std::vector<std::vector<double>> unit_coords(static_cast<std::size_t>(dims));
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (auto& coords : unit_coords) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    coords.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      coords[static_cast<std::size_t>(i)] = (perm[static_cast<std::size_t>(i)] + unit(rng)) / n;
    }
  }

  auto lerp = [](const Range& r, double u) { return r.min + u * (r.max - r.min); };
  std::vector<MosmParams> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    MosmParams p(channels, mixtures);
    std::size_t d = 0;
    auto next = [&] { return unit_coords[d++][static_cast<std::size_t>(i)]; };
    for (int c = 0; c < channels; ++c) {
      for (int q = 0; q < mixtures; ++q) {
        Component& comp = p.at(c, q);
        comp.weight = lerp(bounds.weight, next());
        comp.precision.setZero();
        for (int k = 0; k < 3; ++k) {
          const double a = lerp(bounds.precision_root, next());
          comp.precision(k, k) = a * a;
        }
        for (int k = 0; k < 3; ++k) comp.mean[k] = lerp(bounds.mean, next());
        for (int k = 0; k < 3; ++k) comp.delay[k] = lerp(bounds.delay, next());
        comp.phase = lerp(bounds.phase, next());
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<double> lhs_coordinates(const MosmParams& params) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(free_parameter_count(params.channels, params.mixtures)));
  for (int c = 0; c < params.channels; ++c) {
    for (int q = 0; q < params.mixtures; ++q) {
      const Component& comp = params.at(c, q);
      out.push_back(comp.weight);
      for (int k = 0; k < 3; ++k) out.push_back(std::sqrt(comp.precision(k, k)));
      for (int k = 0; k < 3; ++k) out.push_back(comp.mean[k]);
      for (int k = 0; k < 3; ++k) out.push_back(comp.delay[k]);
      out.push_back(comp.phase);
    }
  }
  return out;
}

KernelVerdict validate_kernel(const CovarianceGrid& cov, double periodicity_tol, const Field3* probe) {
  cov.validate();
  const Dims& d = cov.dims;
  KernelVerdict verdict;

  double peak = 0.0;
  for (const auto& v : cov.values) peak = std::max(peak, std::abs(v[0]));

  // Outer shell: offsets whose wrapped magnitude is maximal along some axis.
  auto on_shell = [](std::int64_t i, std::int64_t n) {
    if (n == 1) return false;
    const std::int64_t far = n / 2;  // even n: index n/2 (r = -pi); odd n: (n-1)/2 and its mirror
    return i == far || i == n - far;
  };
  double boundary = 0.0;
  for (std::int64_t z = 0; z < d.z; ++z) {
    for (std::int64_t y = 0; y < d.y; ++y) {
      for (std::int64_t x = 0; x < d.x; ++x) {
        if (!(on_shell(x, d.x) || on_shell(y, d.y) || on_shell(z, d.z))) continue;
        for (const auto& v : cov.values) boundary = std::max(boundary, std::abs(v[d.index(x, y, z)]));
      }
    }
  }
  verdict.boundary_ratio = peak > 0.0 ? boundary / peak : (boundary > 0.0 ? INFINITY : 0.0);
  if (peak <= 0.0 && boundary <= 0.0) {
    verdict.accepted = false;
    verdict.reason = "degenerate: covariance row is identically zero at the origin";
    return verdict;
  }
  if (boundary > periodicity_tol * peak) {
    verdict.accepted = false;
    verdict.reason = "non-periodic: covariance has not decayed at the domain boundary (ratio " +
                     std::to_string(verdict.boundary_ratio) + ")";
    return verdict;
  }
  if (probe != nullptr) {
    for (double v : probe->data()) verdict.probe_max_abs = std::max(verdict.probe_max_abs, std::abs(v));
    if (!(verdict.probe_max_abs <= 1.0)) {
      verdict.accepted = false;
      verdict.reason = "out of ROGSH range: probe field reaches " + std::to_string(verdict.probe_max_abs);
      return verdict;
    }
  }
  return verdict;
}

Eigen::MatrixXcd cross_spectral_matrix(const MosmParams& params, const Eigen::Vector3d& omega) {
  using C = std::complex<double>;
  const int h = params.channels;
  Eigen::MatrixXcd s = Eigen::MatrixXcd::Zero(h, h);
  for (int b = 0; b < h; ++b) {
    for (int g = 0; g < h; ++g) {
      for (int q = 0; q < params.mixtures; ++q) {
        const CrossParams c = derive_cross_params(params, b, g, q);
        const Eigen::Matrix3d cov = c.precision.inverse();
        const Eigen::Vector3d dp = omega - c.mean;
        const Eigen::Vector3d dn = omega + c.mean;
        // w exp(-1/2 (omega -+ mean)^T A^{-1} (omega -+ mean)) is alpha times the
        // normalized spectral Gaussian; the two lobes carry phases +-phase.
        const double gp = c.weight * std::exp(-0.5 * dp.dot(cov * dp));
        const double gn = c.weight * std::exp(-0.5 * dn.dot(cov * dn));
        const double shift = c.delay.dot(omega);
        s(g, b) += 0.5 * (gp * std::exp(C(0.0, shift + c.phase)) + gn * std::exp(C(0.0, shift - c.phase)));
      }
    }
  }
  return s;
}

SpectralCheck check_cross_spectral_psd(const MosmParams& params, int n, double omega_max) {
  params.validate();
  SpectralCheck out;
  out.min_ratio = INFINITY;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      for (int k = 0; k < n; ++k) {
        auto coord = [&](int t) { return n == 1 ? 0.0 : -omega_max + 2.0 * omega_max * t / (n - 1); };
        const Eigen::Vector3d omega(coord(i), coord(j), coord(k));
        const Eigen::MatrixXcd s = cross_spectral_matrix(params, omega);
        const double scale = std::max(s.cwiseAbs().maxCoeff(), 1e-300);
        out.max_hermitian_defect = std::max(out.max_hermitian_defect, (s - s.adjoint()).cwiseAbs().maxCoeff() / scale);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(s, Eigen::EigenvaluesOnly);
        const auto& ev = es.eigenvalues();
        const double largest = std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
        out.min_ratio = std::min(out.min_ratio, ev.minCoeff() / largest);
      }
    }
  }
  return out;
}

}  // namespace microsynth::mosm
