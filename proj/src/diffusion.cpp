#include "microsynth/diffusion.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "microsynth/errors.hpp"

namespace microsynth::diffusion {

void SamplerConfig::validate(bool allow_full_skip) const {
  if (steps < 1) throw ValidationError("sampler needs N >= 1 steps");
  if (!(sigma_min > 0.0) || !(sigma_max > sigma_min) || !std::isfinite(sigma_max)) {
    throw ValidationError("sampler needs 0 < sigma_min < sigma_max < inf");
  }
  if (!(rho > 0.0) || !std::isfinite(rho)) throw ValidationError("schedule exponent rho must be positive");
  if (!(s_churn >= 0.0) || !(s_noise >= 0.0) || std::isnan(s_tmin) || std::isnan(s_tmax)) {
    throw ValidationError("churn parameters must be non-negative");
  }
  if (skip < 0 || skip > steps || (skip == steps && !allow_full_skip)) {
    throw ValidationError("skip must satisfy 0 <= skip < N (got skip=" + std::to_string(skip) +
                          ", N=" + std::to_string(steps) + ")");
  }
  if (!(sigma_data > 0.0)) throw ValidationError("sigma_data must be positive");
}

std::vector<double> noise_schedule(const SamplerConfig& config) {
  config.validate(true);
  const int n = config.steps;
  const double inv_rho = 1.0 / config.rho;
  const double hi = std::pow(config.sigma_max, inv_rho);
  const double lo = std::pow(config.sigma_min, inv_rho);
  std::vector<double> t(static_cast<std::size_t>(n + 1));
  for (int i = 0; i < n; ++i) {
    const double frac = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
    t[static_cast<std::size_t>(i)] = std::pow(hi + frac * (lo - hi), config.rho);
  }
  t[0] = config.sigma_max;
  if (n > 1) t[static_cast<std::size_t>(n - 1)] = config.sigma_min;
  t[static_cast<std::size_t>(n)] = 0.0;
  return t;
}

double churn_gamma(const SamplerConfig& config, double t) {
  if (t < config.s_tmin || t > config.s_tmax) return 0.0;
  return std::min(config.s_churn / config.steps, std::sqrt(2.0) - 1.0);
}

EdmCoefficients edm_coefficients(double sigma, double sigma_data) {
  const double sd2 = sigma_data * sigma_data;
  const double norm = std::sqrt(sigma * sigma + sd2);
  return {sd2 / (sigma * sigma + sd2), sigma * sigma_data / norm, 1.0 / norm, 0.25 * std::log(sigma)};
}

namespace {

class EdmDenoiser final : public Denoiser {
 public:
  EdmDenoiser(RawModel raw, double sigma_data, int channels, Dims dims, std::string name)
      : raw_(std::move(raw)), sigma_data_(sigma_data), channels_(channels), dims_(dims), name_(std::move(name)) {}

  Field3 denoise(const Field3& x, double sigma) override {
    const EdmCoefficients c = edm_coefficients(sigma, sigma_data_);
    Field3 scaled = x;
    for (double& v : scaled.data()) v *= c.c_in;
    Field3 f = raw_(scaled, c.c_noise);
    if (f.dims() != x.dims() || f.channels() != x.channels()) {
      throw DimensionError("raw model returned a field of the wrong shape");
    }
    Field3 out = x;
    auto& o = out.data();
    const auto& fd = f.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = c.c_skip * o[i] + c.c_out * fd[i];
    return out;
  }
  int channels() const override { return channels_; }
  Dims dims() const override { return dims_; }
  std::string name() const override { return name_; }

 private:
  RawModel raw_;
  double sigma_data_;
  int channels_;
  Dims dims_;
  std::string name_;
};

void check_shape(const Field3& x, int channels, const Dims& dims, const char* what) {
  if (x.channels() != channels || x.dims() != dims) {
    throw DimensionError(std::string(what) + ": field " + std::to_string(x.channels()) + "x" + to_string(x.dims()) +
                         " does not match " + std::to_string(channels) + "x" + to_string(dims));
  }
}

}  // namespace

DenoiserPtr edm_precondition(RawModel raw, double sigma_data, int channels, Dims dims, std::string name) {
  if (!(sigma_data > 0.0)) throw ValidationError("sigma_data must be positive");
  if (!raw) throw ValidationError("edm_precondition needs a raw model");
  dims.validate();
  return std::make_shared<EdmDenoiser>(std::move(raw), sigma_data, channels, dims, std::move(name));
}

GaussianDenoiser::GaussianDenoiser(const CovarianceGrid& full_cov, std::vector<double> means)
    : channels_(full_cov.channels), dims_(full_cov.dims), means_(std::move(means)), fft_(full_cov.dims) {
  full_cov.validate();
  const int h = channels_;
  if (means_.empty()) means_.assign(static_cast<std::size_t>(h), 0.0);
  if (means_.size() != static_cast<std::size_t>(h)) throw ValidationError("gaussian denoiser: one mean per channel");
  std::vector<std::vector<Complex>> spectra(static_cast<std::size_t>(h * h));
  for (int b = 0; b < h; ++b) {
    for (int g = 0; g < h; ++g) {
      const auto* v = full_cov.find(b, g);
      if (v == nullptr) {
        throw ValidationError("gaussian denoiser needs the full covariance; pair (" + std::to_string(b) + "," +
                              std::to_string(g) + ") is missing");
      }
      spectra[static_cast<std::size_t>(b * h + g)] = fft_.forward(*v);
    }
  }
  const std::size_t nspec = fft_.spectrum_size();
  eigenvalues_.resize(nspec * static_cast<std::size_t>(h));
  eigenvectors_.resize(nspec * static_cast<std::size_t>(h * h));
  double total = 0.0;
  double clamped = 0.0;
  Eigen::MatrixXcd m(h, h);
  for (std::size_t k = 0; k < nspec; ++k) {
    // E[X_k X_k^H]_{g b} = S * DFT[C^{b g}](k).
    for (int b = 0; b < h; ++b) {
      for (int g = 0; g < h; ++g) m(g, b) = spectra[static_cast<std::size_t>(b * h + g)][k];
    }
    const Eigen::MatrixXcd herm = 0.5 * (m + m.adjoint());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(herm);
    for (int j = 0; j < h; ++j) {
      double lambda = es.eigenvalues()[j];
      total += std::abs(lambda);
      if (lambda < 0.0) {
        clamped += -lambda;
        lambda = 0.0;
      }
      eigenvalues_[k * static_cast<std::size_t>(h) + static_cast<std::size_t>(j)] = lambda;
      for (int i = 0; i < h; ++i) {
        eigenvectors_[k * static_cast<std::size_t>(h * h) + static_cast<std::size_t>(j * h + i)] =
            es.eigenvectors()(i, j);
      }
    }
  }
  clamped_fraction_ = total > 0.0 ? clamped / total : 0.0;
}

Field3 GaussianDenoiser::denoise(const Field3& x, double sigma) {
  check_shape(x, channels_, dims_, "gaussian denoiser");
  if (!(sigma >= 0.0)) throw ValidationError("noise level must be non-negative");
  const int h = channels_;
  const std::size_t nspec = fft_.spectrum_size();
  const double s2 = sigma * sigma;
  std::vector<std::vector<Complex>> spec(static_cast<std::size_t>(h));
  std::vector<double> centred(x.voxels());
  for (int c = 0; c < h; ++c) {
    const auto in = x.channel(c);
    const double mu = means_[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < centred.size(); ++i) centred[i] = in[i] - mu;
    spec[static_cast<std::size_t>(c)] = fft_.forward(centred);
  }
  std::vector<Complex> v(static_cast<std::size_t>(h));
  std::vector<Complex> proj(static_cast<std::size_t>(h));
  for (std::size_t k = 0; k < nspec; ++k) {
    const Complex* u = &eigenvectors_[k * static_cast<std::size_t>(h * h)];
    const double* lam = &eigenvalues_[k * static_cast<std::size_t>(h)];
    for (int c = 0; c < h; ++c) v[static_cast<std::size_t>(c)] = spec[static_cast<std::size_t>(c)][k];
    for (int j = 0; j < h; ++j) {
      Complex dot{};
      for (int i = 0; i < h; ++i) dot += std::conj(u[j * h + i]) * v[static_cast<std::size_t>(i)];
      proj[static_cast<std::size_t>(j)] = dot * (lam[j] / (lam[j] + s2 + 1e-12));
    }
    for (int i = 0; i < h; ++i) {
      Complex acc{};
      for (int j = 0; j < h; ++j) acc += u[j * h + i] * proj[static_cast<std::size_t>(j)];
      spec[static_cast<std::size_t>(i)][k] = acc;
    }
  }
  Field3 out(h, dims_);
  const double inv_s = 1.0 / static_cast<double>(x.voxels());
  for (int c = 0; c < h; ++c) {
    auto o = out.channel(c);
    fft_.inverse(spec[static_cast<std::size_t>(c)], o);
    const double mu = means_[static_cast<std::size_t>(c)];
    for (double& val : o) val = val * inv_s + mu;
  }
  return out;
}

DenoiserPtr gaussian_denoiser(const CovarianceGrid& full_cov, std::vector<double> means) {
  return std::make_shared<GaussianDenoiser>(full_cov, std::move(means));
}

Field3 sample(const Field3* x_init, Denoiser& denoiser, const SamplerConfig& config, std::mt19937_64& rng,
              const CondFn& cond, std::vector<TraceEvent>* trace) {
  config.validate();
  const std::vector<double> t = noise_schedule(config);
  const int n = config.steps;
  const int h = denoiser.channels();
  const Dims dims = denoiser.dims();
  std::normal_distribution<double> normal(0.0, 1.0);
  auto record = [&](int step, TraceKind kind, double sigma, double gamma) {
    if (trace != nullptr) trace->push_back({step, kind, sigma, gamma});
  };

  Field3 x;
  if (config.skip == 0) {
    if (x_init != nullptr) throw ValidationError("skip = 0 draws its own starting noise; x_init must be absent");
    x = Field3(h, dims);
    for (double& v : x.data()) v = t[0] * normal(rng);
    record(0, TraceKind::Init, t[0], 0.0);
  } else {
    if (x_init == nullptr) throw ValidationError("skip > 0 requires an initial field");
    check_shape(*x_init, h, dims, "sampler x_init");
    x = *x_init;
  }

  for (int i = config.skip; i < n; ++i) {
    const double ti = t[static_cast<std::size_t>(i)];
    const double tn = t[static_cast<std::size_t>(i + 1)];
    const double gamma = churn_gamma(config, ti);
    const double t_hat = ti + gamma * ti;

    Field3 x_hat = x;
    if (gamma > 0.0) {
      const double scale = std::sqrt(t_hat * t_hat - ti * ti) * config.s_noise;
      for (double& v : x_hat.data()) v += scale * normal(rng);
      record(i, TraceKind::Churn, t_hat, gamma);
    }

    const Field3 den = denoiser.denoise(x_hat, t_hat);
    check_shape(den, h, dims, "denoiser output");
    const auto& xh = x_hat.data();
    std::vector<double> d(xh.size());
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = (xh[k] - den.data()[k]) / t_hat;

    Field3 next = x_hat;
    auto& nx = next.data();
    for (std::size_t k = 0; k < nx.size(); ++k) nx[k] = xh[k] + (tn - t_hat) * d[k];
    record(i, TraceKind::Euler, t_hat, gamma);

    if (tn != 0.0) {
      const Field3 den2 = denoiser.denoise(next, tn);
      check_shape(den2, h, dims, "denoiser output");
      for (std::size_t k = 0; k < nx.size(); ++k) {
        const double d2 = (nx[k] - den2.data()[k]) / tn;
        nx[k] = xh[k] + (tn - t_hat) * (0.5 * d[k] + 0.5 * d2);
      }
      record(i, TraceKind::Correction, tn, gamma);
    }

    if (cond) {
      cond(next, i);
      check_shape(next, h, dims, "conditioned field");
      record(i, TraceKind::Condition, tn, gamma);
    }

    if (!next.all_finite()) {
      std::ostringstream msg;
      msg << "non-finite values after step " << i << " (sigma " << ti << " -> " << tn << ")";
      throw NumericalError(msg.str());
    }
    x = std::move(next);
  }
  return x;
}

Mask::Mask(int channels, Dims dims) : channels_(channels), dims_(dims) {
  dims.validate();
  if (channels < 1) throw ValidationError("mask needs at least one channel");
  known_.assign(static_cast<std::size_t>(channels) * dims.voxels(), 0);
  values_.assign(known_.size(), 0.0);
}

void Mask::set(int c, std::int64_t x, std::int64_t y, std::int64_t z, double value) {
  if (c < 0 || c >= channels_ || x < 0 || x >= dims_.x || y < 0 || y >= dims_.y || z < 0 || z >= dims_.z) {
    throw ValidationError("mask index out of range");
  }
  if (!std::isfinite(value)) throw ValidationError("mask values must be finite");
  const std::size_t flat = static_cast<std::size_t>(c) * dims_.voxels() + dims_.index(x, y, z);
  known_[flat] = 1;
  values_[flat] = value;
}

std::size_t Mask::known_count() const {
  std::size_t n = 0;
  for (auto k : known_) n += k;
  return n;
}

void Mask::apply(Field3& x) const {
  check_shape(x, channels_, dims_, "mask");
  auto& d = x.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (known_[i]) d[i] = values_[i];
  }
}

InpaintCondition::InpaintCondition(Mask mask, double fraction, int steps)
    : mask_(std::move(mask)), fraction_(fraction), steps_(steps) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ValidationError("inpainting fraction must lie in [0, 1]");
  if (steps < 1) throw ValidationError("inpainting needs N >= 1");
}

bool InpaintCondition::fires(int step) const { return static_cast<double>(step) < fraction_ * steps_; }

void InpaintCondition::operator()(Field3& x, int step) {
  if (!fires(step)) return;
  mask_.apply(x);
  fired_.push_back(step);
}

CondFn inpaint_cond(Mask mask, double fraction, int steps) {
  auto state = std::make_shared<InpaintCondition>(std::move(mask), fraction, steps);
  return [state](Field3& x, int step) { (*state)(x, step); };
}

OrthoStatsCondition::OrthoStatsCondition(stats::OrthoStats target, OrthoConfig config)
    : objective_(std::move(target), config.norm), config_(config) {
  if (!(config.lr > 0.0)) throw ValidationError("ortho conditioning needs lr > 0");
  if (config.max_iters < 1) throw ValidationError("ortho conditioning needs max_iters >= 1");
  if (!(config.lr_growth >= 1.0) || !std::isfinite(config.lr_growth)) {
    throw ValidationError("ortho conditioning needs a finite lr_growth >= 1");
  }
  if (config.steps < 1) throw ValidationError("ortho conditioning needs N >= 1");
  if (config.divergence_patience < 1 || config.max_backtracks < 0) {
    throw ValidationError("ortho conditioning patience must be positive");
  }
}

double OrthoStatsCondition::threshold(int step) const {
  return (config_.steps - step) * config_.threshold_slope + config_.threshold_final;
}

void OrthoStatsCondition::operator()(Field3& x, int step) {
  OrthoStepReport report;
  report.step = step;
  report.threshold = threshold(step);
  stats::StatsLoss loss = objective_.evaluate(x, true);
  report.err_start = loss.err;

  double lr = config_.lr;
  bool descended = false;
  int backtracks = 0;
  int rejected = 0;
  while (loss.err > report.threshold) {
    if (report.iterations >= config_.max_iters) {
      report.hit_max_iters = true;
      break;
    }
    Field3 candidate = x;
    auto& cd = candidate.data();
    const auto& g = loss.grad.data();
    for (std::size_t k = 0; k < cd.size(); ++k) cd[k] -= lr * g[k];
    stats::StatsLoss next = objective_.evaluate(candidate, true);
    ++report.iterations;
    if (std::isfinite(next.err) && next.err < loss.err) {
      x = std::move(candidate);
      loss = std::move(next);
      descended = true;
      rejected = 0;
      lr *= config_.lr_growth;
      continue;
    }
    lr *= 0.5;
    if (!descended) {
      if (++backtracks > config_.max_backtracks) {
        std::ostringstream msg;
        msg << "ortho conditioning at step " << step << ": no descent after " << backtracks
            << " step halvings (err " << loss.err << ", threshold " << report.threshold << ")";
        throw ConvergenceError(msg.str());
      }
    } else if (++rejected >= config_.divergence_patience) {
      std::ostringstream msg;
      msg << "ortho conditioning diverged at step " << step << ": loss rose on " << rejected
          << " consecutive iterations (err " << loss.err << ", threshold " << report.threshold << ", lr " << lr
          << ", iteration " << report.iterations << ")";
      throw ConvergenceError(msg.str());
    }
  }
  report.err_end = loss.err;
  report.plane_err = loss.plane_err;
  report.lr = lr;
  reports_.push_back(report);
}

Field3 lgd_refine(const Field3& x_grf, Denoiser& denoiser, const SamplerConfig& config, std::mt19937_64& rng,
                  const LgdOptions& options, const CondFn& cond) {
  config.validate(true);
  check_shape(x_grf, denoiser.channels(), denoiser.dims(), "lgd_refine seed");
  if (options.mean_correction && options.target_means.size() != static_cast<std::size_t>(x_grf.channels())) {
    throw ValidationError("mean correction needs one target mean per channel");
  }
  if (config.skip == config.steps) return x_grf;

  CondFn combined = cond;
  if (options.mean_correction) {
    combined = [&options, &cond](Field3& x, int step) {
      const auto means = x.channel_means();
      for (int c = 0; c < x.channels(); ++c) {
        const double shift = options.target_means[static_cast<std::size_t>(c)] - means[static_cast<std::size_t>(c)];
        for (double& v : x.channel(c)) v += shift;
      }
      if (cond) cond(x, step);
    };
  }
  if (config.skip == 0) return sample(nullptr, denoiser, config, rng, combined);

  Field3 seed = x_grf;
  if (options.renoise) {
    const double t_skip = noise_schedule(config)[static_cast<std::size_t>(config.skip)];
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : seed.data()) v += t_skip * normal(rng);
  }
  return sample(&seed, denoiser, config, rng, combined);
}

}  // namespace microsynth::diffusion
