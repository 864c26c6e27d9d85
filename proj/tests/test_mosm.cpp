#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/LU>

#include "microsynth/errors.hpp"
#include "microsynth/mogrf.hpp"
#include "microsynth/mosm.hpp"
#include "microsynth/mosm_fit.hpp"
#include "test_util.hpp"

using namespace microsynth;
using namespace microsynth::mosm;

namespace {

MosmParams random_params(int channels, int mixtures, std::uint64_t seed, bool full_precision = true) {
  auto p = sample_params_lhs(ParamBounds{}, 1, mixtures, channels, seed).front();
  if (full_precision) {
    std::mt19937_64 rng(seed + 1000);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& c : p.components) {
      Eigen::Matrix3d l = Eigen::Matrix3d::Zero();
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < i; ++j) l(i, j) = n(rng);
        l(i, i) = 1.0 + std::abs(n(rng)) * 2.0;
      }
      c.precision = l * l.transpose();
    }
  }
  return p;
}

// Direct evaluation of one mixture term from the per-channel formulas, using
// the single-channel spectral mixture form for beta == gamma.
double single_channel_term(const Component& c, const Eigen::Vector3d& r) {
  const double alpha = c.weight * c.weight * std::pow(2.0 * std::numbers::pi, 1.5) * std::sqrt(c.precision.determinant());
  return alpha * std::exp(-0.5 * r.dot(c.precision * r)) * std::cos(r.dot(c.mean));
}

}  // namespace

TEST(Mosm, DiagonalReductionsExact) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto p = random_params(3, 2, seed);
    for (int b = 0; b < 3; ++b) {
      for (int q = 0; q < 2; ++q) {
        const auto c = derive_cross_params(p, b, b, q);
        const auto& comp = p.at(b, q);
        EXPECT_EQ(c.precision, comp.precision);
        EXPECT_EQ(c.mean, comp.mean);
        EXPECT_EQ(c.weight, comp.weight * comp.weight);
        EXPECT_EQ(c.delay, Eigen::Vector3d::Zero());
        EXPECT_EQ(c.phase, 0.0);
      }
    }
  }
}

TEST(Mosm, DiagonalEntryIsSpectralMixture) {
  const auto p = random_params(2, 3, 4);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Vector3d r(u(rng), u(rng), u(rng));
    for (int b = 0; b < 2; ++b) {
      double expected = 0.0;
      for (int q = 0; q < 3; ++q) expected += single_channel_term(p.at(b, q), r);
      EXPECT_NEAR(eval_kernel_entry(p, b, b, r), expected, 1e-14 + 1e-12 * std::abs(expected));
    }
  }
}

TEST(Mosm, CrossParamsSymmetries) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto p = random_params(2, 1, seed);
    const auto bg = derive_cross_params(p, 0, 1, 0);
    const auto gb = derive_cross_params(p, 1, 0, 0);
    EXPECT_LT((bg.precision - gb.precision).norm(), 1e-12 * bg.precision.norm());
    EXPECT_LT((bg.mean - gb.mean).norm(), 1e-12 * (1.0 + bg.mean.norm()));
    EXPECT_NEAR(bg.weight, gb.weight, 1e-18);
    EXPECT_EQ(bg.delay, -gb.delay);
    EXPECT_EQ(bg.phase, -gb.phase);
    // Cross weight never exceeds the product of channel weights.
    EXPECT_LE(std::abs(bg.weight), std::abs(p.at(0, 0).weight * p.at(1, 0).weight) * (1.0 + 1e-15));
  }
}

TEST(Mosm, KernelIsSymmetricUnderNegationAndSwap) {
  // k_bg(r) = k_gb(-r).
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = random_params(3, 2, seed);
    const Eigen::Vector3d r(u(rng), u(rng), u(rng));
    const Eigen::MatrixXd kp = eval_kernel(p, r);
    const Eigen::MatrixXd km = eval_kernel(p, -r);
    EXPECT_LT((kp - km.transpose()).cwiseAbs().maxCoeff(), 1e-14 + 1e-12 * kp.cwiseAbs().maxCoeff());
  }
}

TEST(Mosm, GridMatchesPointwiseLoop) {
  const auto p = random_params(3, 2, 9);
  const Dims d{5, 4, 6};
  const auto grid = kernel_to_full_grid(p, d);
  const auto row = kernel_to_grid(p, d);
  ASSERT_TRUE(row.is_reference_row());
  for (std::int64_t z = 0; z < d.z; ++z) {
    for (std::int64_t y = 0; y < d.y; ++y) {
      for (std::int64_t x = 0; x < d.x; ++x) {
        const Eigen::Vector3d r(2 * std::numbers::pi * signed_offset(x, 5) / 5.0,
                                2 * std::numbers::pi * signed_offset(y, 4) / 4.0,
                                2 * std::numbers::pi * signed_offset(z, 6) / 6.0);
        const Eigen::MatrixXd k = eval_kernel(p, r);
        for (int b = 0; b < 3; ++b) {
          for (int g = 0; g < 3; ++g) EXPECT_NEAR(grid.at(b, g)[d.index(x, y, z)], k(b, g), 1e-15);
          EXPECT_EQ(row.at(0, b)[d.index(x, y, z)], grid.at(0, b)[d.index(x, y, z)]);
        }
      }
    }
  }
}

TEST(Mosm, LatticeOffsetConvention) {
  const Dims d{4, 5, 1};
  EXPECT_NEAR(lattice_offset(d, 2, 0, 0).x(), -std::numbers::pi, 1e-15);
  EXPECT_NEAR(lattice_offset(d, 1, 0, 0).x(), std::numbers::pi / 2, 1e-15);
  EXPECT_NEAR(lattice_offset(d, 0, 3, 0).y(), -2 * 2 * std::numbers::pi / 5, 1e-15);
  EXPECT_NEAR(lattice_offset(d, 0, 2, 0).y(), 2 * 2 * std::numbers::pi / 5, 1e-15);
}

TEST(Mosm, LhsOneSamplePerBin) {
  const ParamBounds bounds;
  const int n = 40;
  const auto sets = sample_params_lhs(bounds, n, 2, 3, 11);
  ASSERT_EQ(sets.size(), static_cast<std::size_t>(n));
  const int dims = free_parameter_count(3, 2);
  const Range ranges[kScalarsPerComponent] = {bounds.weight, bounds.precision_root, bounds.precision_root,
                                              bounds.precision_root, bounds.mean, bounds.mean, bounds.mean,
                                              bounds.delay, bounds.delay, bounds.delay, bounds.phase};
  std::vector<std::vector<int>> hits(static_cast<std::size_t>(dims), std::vector<int>(n, 0));
  for (const auto& p : sets) {
    const auto c = lhs_coordinates(p);
    ASSERT_EQ(c.size(), static_cast<std::size_t>(dims));
    for (int k = 0; k < dims; ++k) {
      const Range& r = ranges[k % kScalarsPerComponent];
      const double u = (c[static_cast<std::size_t>(k)] - r.min) / (r.max - r.min);
      ASSERT_GE(u, 0.0);
      ASSERT_LT(u, 1.0);
      ++hits[static_cast<std::size_t>(k)][static_cast<std::size_t>(u * n)];
    }
  }
  for (const auto& h : hits) {
    for (int count : h) EXPECT_EQ(count, 1);
  }
}

TEST(Mosm, LhsDeterministicAndDiagonal) {
  const auto a = sample_params_lhs(ParamBounds{}, 5, 4, 3, 99);
  const auto b = sample_params_lhs(ParamBounds{}, 5, 4, 3, 99);
  const auto c = sample_params_lhs(ParamBounds{}, 5, 4, 3, 100);
  EXPECT_EQ(lhs_coordinates(a[2]), lhs_coordinates(b[2]));
  EXPECT_NE(lhs_coordinates(a[2]), lhs_coordinates(c[2]));
  for (const auto& comp : a[0].components) {
    EXPECT_EQ(comp.precision(0, 1), 0.0);
    EXPECT_EQ(comp.precision(1, 2), 0.0);
    EXPECT_GE(comp.precision(0, 0), 1.5 * 1.5);
  }
}

TEST(Mosm, PaperScaleParameterCount) {
  // Three channels with four mixtures each.
  EXPECT_EQ(free_parameter_count(3, 4), 132);
}

TEST(Mosm, ParamValidation) {
  auto p = testutil::smooth_params(2);
  EXPECT_NO_THROW(p.validate());
  p.at(1, 0).precision(0, 0) = -1.0;
  EXPECT_THROW(p.validate(), ValidationError);
  p = testutil::smooth_params(2);
  p.at(0, 0).precision(0, 1) = 0.5;
  EXPECT_THROW(p.validate(), ValidationError);
  p = testutil::smooth_params(2);
  p.at(0, 0).mean.x() = NAN;
  EXPECT_THROW(p.validate(), ValidationError);
  EXPECT_THROW(MosmParams(0, 1), ValidationError);
  ParamBounds bad;
  bad.precision_root = {0.0, 1.0};
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = ParamBounds{};
  bad.mean = {1.0, -1.0};
  EXPECT_THROW(sample_params_lhs(bad, 3, 1, 1, 0), ValidationError);
}

TEST(Mosm, SingularSumIsDegenerate) {
  MosmParams p(2, 1);
  p.at(0, 0).precision = Eigen::Matrix3d::Zero();
  p.at(1, 0).precision = Eigen::Matrix3d::Zero();
  EXPECT_THROW(derive_cross_params(p, 0, 1, 0), DegenerateError);
}

TEST(Mosm, CrossSpectrumIsPsd) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto p = random_params(3, 4, seed, seed % 2 == 0);
    const auto check = check_cross_spectral_psd(p, 5, 10.0);
    EXPECT_GT(check.min_ratio, -1e-10) << "seed " << seed;
    EXPECT_LT(check.max_hermitian_defect, 1e-12);
  }
}

TEST(Mosm, SpectrumTransformsToKernel) {
  // k(r) = integral of S(omega) exp(i omega . r) over R^3, by quadrature.
  MosmParams p(1, 1);
  auto& c = p.at(0, 0);
  c.weight = 0.7;
  c.precision = Eigen::Vector3d(2.25, 1.5, 3.0).asDiagonal();
  c.mean = Eigen::Vector3d(1.5, -0.5, 0.0);
  c.delay = Eigen::Vector3d(0.2, 0.0, 0.1);
  c.phase = 0.8;
  const double h = 0.25;
  const int m = 44;
  for (const Eigen::Vector3d& r : {Eigen::Vector3d(0.0, 0.0, 0.0), Eigen::Vector3d(0.3, -0.2, 0.5)}) {
    std::complex<double> integral = 0.0;
    for (int i = -m; i <= m; ++i) {
      for (int j = -m; j <= m; ++j) {
        for (int k = -m; k <= m; ++k) {
          const Eigen::Vector3d w(i * h, j * h, k * h);
          integral += cross_spectral_matrix(p, w)(0, 0) * std::exp(std::complex<double>(0.0, w.dot(r)));
        }
      }
    }
    integral *= h * h * h;
    const double k = eval_kernel_entry(p, 0, 0, r);
    EXPECT_NEAR(integral.real(), k, 1e-9 * std::abs(eval_kernel_entry(p, 0, 0, Eigen::Vector3d::Zero())));
    EXPECT_NEAR(integral.imag(), 0.0, 1e-9);
  }
}

TEST(Mosm, ValidateKernelAcceptsDecayed) {
  const auto cov = kernel_to_grid(testutil::smooth_params(3, 3.0), {16, 16, 16});
  const auto v = validate_kernel(cov);
  EXPECT_TRUE(v.accepted) << v.reason;
  EXPECT_LT(v.boundary_ratio, 1e-3);
}

TEST(Mosm, ValidateKernelRejectsNonPeriodic) {
  const auto cov = kernel_to_grid(testutil::smooth_params(2, 0.3), {16, 16, 16});
  const auto v = validate_kernel(cov);
  EXPECT_FALSE(v.accepted);
  EXPECT_EQ(v.reason.rfind("non-periodic:", 0), 0u);
}

TEST(Mosm, ValidateKernelRejectsZeroAndProbe) {
  auto cov = kernel_to_grid(testutil::smooth_params(1, 3.0), {8, 8, 8});
  CovarianceGrid zero = cov;
  std::fill(zero.values[0].begin(), zero.values[0].end(), 0.0);
  EXPECT_EQ(validate_kernel(zero).reason.rfind("degenerate:", 0), 0u);
  Field3 probe(1, {8, 8, 8}, 0.5);
  EXPECT_TRUE(validate_kernel(cov, kDefaultPeriodicityTol, &probe).accepted);
  probe.at(0, 3, 3, 3) = -1.5;
  const auto v = validate_kernel(cov, kDefaultPeriodicityTol, &probe);
  EXPECT_FALSE(v.accepted);
  EXPECT_EQ(v.reason.rfind("out of ROGSH range:", 0), 0u);
  EXPECT_DOUBLE_EQ(v.probe_max_abs, 1.5);
}

TEST(Mosm, KernelBoundedByZeroLag) {
  // |k_bg(r)| <= sqrt(k_bb(0) k_gg(0)) for every valid parameter set.
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-3.2, 3.2);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto p = random_params(3, 4, seed, false);
    const Eigen::MatrixXd k0 = eval_kernel(p, Eigen::Vector3d::Zero());
    for (int i = 0; i < 50; ++i) {
      const Eigen::MatrixXd k = eval_kernel(p, Eigen::Vector3d(u(rng), u(rng), u(rng)));
      for (int b = 0; b < 3; ++b) {
        for (int g = 0; g < 3; ++g) EXPECT_LE(std::abs(k(b, g)), std::sqrt(k0(b, b) * k0(g, g)) * (1 + 1e-12));
      }
    }
  }
}

TEST(Mosm, FitRecoversKnownKernel) {
  MosmParams truth(2, 1);
  truth.at(0, 0) = {0.015, Eigen::Vector3d(9.0, 6.0, 12.0).asDiagonal(), {1.0, -0.5, 0.3}, {0.1, 0.0, -0.1}, 0.4};
  truth.at(1, 0) = {-0.01, Eigen::Vector3d(8.0, 10.0, 7.0).asDiagonal(), {0.5, 0.5, 0.0}, {-0.1, 0.05, 0.0}, 1.2};
  const auto target = kernel_to_full_grid(truth, {8, 8, 8});
  FitOptions options;
  options.restarts = 1;
  MosmParams warm = truth;
  for (auto& c : warm.components) {
    c.precision *= 1.2;
    c.mean *= 0.9;
    c.weight *= 1.1;
  }
  options.warm_start = warm;
  const auto fit = fit_mosm(target, 1, options);
  EXPECT_LT(fit.residual, 1e-8 * fit.energy);
  EXPECT_GE(fit.restarts_run, 1);
  const auto refit = kernel_to_full_grid(fit.params, {8, 8, 8});
  for (std::size_t p = 0; p < target.values.size(); ++p) {
    for (std::size_t i = 0; i < target.values[p].size(); ++i) {
      EXPECT_NEAR(refit.values[p][i], target.values[p][i], 1e-5 * std::sqrt(fit.energy) + 1e-12);
    }
  }
}

TEST(Mosm, FitFromRandomStartsReducesResidual) {
  const auto truth = testutil::smooth_params(1, 2.5, 0.02);
  const auto target = kernel_to_grid(truth, {6, 6, 6});
  FitOptions options;
  options.restarts = 4;
  options.seed = 3;
  const auto fit = fit_mosm(target, 1, options);
  EXPECT_LT(fit.residual, 0.05 * fit.energy);
  EXPECT_THROW(fit_mosm(target, 0, options), ValidationError);
  EXPECT_THROW(fit_mosm(target, 17, options), ValidationError);
}
