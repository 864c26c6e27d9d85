#pragma once

// Second-order stochastic diffusion sampler with EDM preconditioning, an
// exact Gaussian-posterior denoiser, and the post-training conditioning
// functions (mask inpainting, orthogonal-statistics matching).

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "microsynth/fft.hpp"
#include "microsynth/field.hpp"
#include "microsynth/grids.hpp"
#include "microsynth/spatial_stats.hpp"

namespace microsynth::diffusion {

/// D(x; sigma): estimate of the clean field from a noisy one.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Field3 denoise(const Field3& x, double sigma) = 0;
  virtual int channels() const = 0;
  virtual Dims dims() const = 0;
  virtual std::string name() const = 0;
};

using DenoiserPtr = std::shared_ptr<Denoiser>;

struct SamplerConfig {
  int steps = 32;
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double rho = 7.0;
  double s_churn = 0.0;
  double s_noise = 1.0;
  double s_tmin = 0.0;
  double s_tmax = std::numeric_limits<double>::infinity();
  int skip = 0;
  double sigma_data = 0.5;

  /// `allow_full_skip` admits skip == steps (no diffusion steps at all).
  void validate(bool allow_full_skip = false) const;
};

/// t_0 .. t_N: rho-warped from sigma_max to sigma_min, then t_N = 0.
std::vector<double> noise_schedule(const SamplerConfig& config);

/// gamma_i = min(S_churn / N, sqrt(2) - 1) inside [S_tmin, S_tmax], else 0.
double churn_gamma(const SamplerConfig& config, double t);

struct EdmCoefficients {
  double c_skip;
  double c_out;
  double c_in;
  double c_noise;
};

EdmCoefficients edm_coefficients(double sigma, double sigma_data);

/// Raw network F(x_in; c_noise) operating on preconditioned input.
using RawModel = std::function<Field3(const Field3& x_in, double c_noise)>;

/// D(x; sigma) = c_skip x + c_out F(c_in x; c_noise).
DenoiserPtr edm_precondition(RawModel raw, double sigma_data, int channels, Dims dims, std::string name = "edm");

/// Posterior mean of a stationary Gaussian prior with the given full H x H
/// covariance and constant means under isotropic noise sigma^2, solved per
/// frequency. Negative spectral eigenvalues are clamped to zero.
class GaussianDenoiser final : public Denoiser {
 public:
  GaussianDenoiser(const CovarianceGrid& full_cov, std::vector<double> means);

  Field3 denoise(const Field3& x, double sigma) override;
  int channels() const override { return channels_; }
  Dims dims() const override { return dims_; }
  std::string name() const override { return "gaussian"; }

  /// Share of sum |eigenvalue| removed by clamping.
  double clamped_fraction() const { return clamped_fraction_; }
  const std::vector<double>& means() const { return means_; }

 private:
  int channels_;
  Dims dims_;
  std::vector<double> means_;
  RealFft3 fft_;
  // Per half-spectrum frequency: eigenvalues (H) and eigenvectors (H x H, column-major).
  std::vector<double> eigenvalues_;
  std::vector<Complex> eigenvectors_;
  double clamped_fraction_ = 0.0;
};

DenoiserPtr gaussian_denoiser(const CovarianceGrid& full_cov, std::vector<double> means);

/// Conditioning hook applied after step i, in place.
using CondFn = std::function<void(Field3& x, int step)>;

enum class TraceKind { Init, Churn, Euler, Correction, Condition };

struct TraceEvent {
  int step;
  TraceKind kind;
  double sigma;  // noise level the event operates at
  double gamma;  // churn factor of the step
};

/// Runs the sampler. skip == 0 draws x ~ N(0, t_0^2 I) and requires no
/// x_init; skip > 0 requires x_init and starts from it unchanged.
Field3 sample(const Field3* x_init, Denoiser& denoiser, const SamplerConfig& config, std::mt19937_64& rng,
              const CondFn& cond = {}, std::vector<TraceEvent>* trace = nullptr);

/// Known values per voxel and channel.
class Mask {
 public:
  Mask() = default;
  Mask(int channels, Dims dims);

  int channels() const { return channels_; }
  const Dims& dims() const { return dims_; }
  void set(int c, std::int64_t x, std::int64_t y, std::int64_t z, double value);
  bool known(std::size_t flat) const { return known_[flat] != 0; }
  double value(std::size_t flat) const { return values_[flat]; }
  std::size_t known_count() const;
  /// Overwrites every known entry of `x`.
  void apply(Field3& x) const;

 private:
  int channels_ = 0;
  Dims dims_{};
  std::vector<std::uint8_t> known_;
  std::vector<double> values_;
};

/// Overwrites known voxels while i < fraction * N.
class InpaintCondition {
 public:
  InpaintCondition(Mask mask, double fraction, int steps);
  void operator()(Field3& x, int step);
  bool fires(int step) const;
  const std::vector<int>& fired_steps() const { return fired_; }

 private:
  Mask mask_;
  double fraction_;
  int steps_;
  std::vector<int> fired_;
};

CondFn inpaint_cond(Mask mask, double fraction, int steps);

struct OrthoConfig {
  double lr = 1e-2;
  int max_iters = 5000;
  double threshold_slope = 1e-5;   // threshold_i = (N - i) * slope + final
  double threshold_final = 1e-7;
  int steps = 32;                  // N of the sampler
  stats::LossNormalization norm = stats::LossNormalization::Sum;
  int divergence_patience = 10;    // consecutive increasing iterations before aborting
  int max_backtracks = 30;         // halvings allowed for the first step of each call
  double lr_growth = 2.0;          // lr multiplier after an accepted iteration; 1 keeps it fixed
};

struct OrthoStepReport {
  int step = 0;
  double threshold = 0.0;
  double err_start = 0.0;
  double err_end = 0.0;
  std::array<double, 3> plane_err{};
  int iterations = 0;
  bool hit_max_iters = false;
  double lr = 0.0;
};

/// Gradient descent on the plane-statistics loss until err <= threshold_i.
/// Each call first backtracks from the configured lr until the loss drops,
/// then multiplies it by lr_growth after every accepted iteration and halves
/// it whenever an iteration does not decrease the loss (the rejected iterate
/// is discarded).
class OrthoStatsCondition {
 public:
  OrthoStatsCondition(stats::OrthoStats target, OrthoConfig config);

  void operator()(Field3& x, int step);
  double threshold(int step) const;
  const std::vector<OrthoStepReport>& reports() const { return reports_; }
  const stats::OrthoStatsObjective& objective() const { return objective_; }

 private:
  stats::OrthoStatsObjective objective_;
  OrthoConfig config_;
  std::vector<OrthoStepReport> reports_;
};

struct LgdOptions {
  /// Adds t_skip * N(0, I) to the seed before refinement.
  bool renoise = true;
  /// Re-centres channel means to `target_means` after every step.
  bool mean_correction = false;
  std::vector<double> target_means;
};

/// Seeds the sampler at step `skip` with a MOGRF draw. skip == N returns the
/// seed unchanged.
Field3 lgd_refine(const Field3& x_grf, Denoiser& denoiser, const SamplerConfig& config, std::mt19937_64& rng,
                  const LgdOptions& options = {}, const CondFn& cond = {});

}  // namespace microsynth::diffusion
