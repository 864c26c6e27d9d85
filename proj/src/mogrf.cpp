#include "microsynth/mogrf.hpp"

#include <algorithm>
#include <cmath>

#include "microsynth/errors.hpp"
#include "microsynth/spatial_stats.hpp"

namespace microsynth::mogrf {

void MogrfSpec::validate() const {
  covrow.validate();
  if (!covrow.is_reference_row()) throw ValidationError("MOGRF needs the reference row (0, g) of the covariance");
  if (means.size() != static_cast<std::size_t>(covrow.channels)) {
    throw ValidationError("MOGRF spec has " + std::to_string(means.size()) + " means for " +
                          std::to_string(covrow.channels) + " channels");
  }
  for (double m : means) {
    if (!std::isfinite(m)) throw ValidationError("MOGRF means must be finite");
  }
  for (const auto& v : covrow.values) {
    for (double x : v) {
      if (!std::isfinite(x)) throw ValidationError("MOGRF covariance must be finite");
    }
  }
}

MogrfSpec make_spec(CovarianceGrid covrow, std::vector<double> means) {
  MogrfSpec spec;
  if (means.empty()) means.assign(static_cast<std::size_t>(covrow.channels), 0.0);
  spec.means = std::move(means);
  spec.covrow = std::move(covrow);
  spec.validate();
  return spec;
}

Sampler::Sampler(MogrfSpec spec) : spec_(std::move(spec)), rfft_(spec_.dims()), cfft_(spec_.dims()) {
  spec_.validate();
  const Dims& d = spec_.dims();
  const std::size_t s = d.voxels();
  const double inv_s = 1.0 / static_cast<double>(s);

  // Full complex spectrum of f^{00} for the reference amplitude.
  std::vector<Complex> f00(s);
  const auto& row0 = spec_.covrow.at(0, 0);
  for (std::size_t i = 0; i < s; ++i) f00[i] = row0[i];
  cfft_.forward(f00);

  amplitude_.assign(s, 0.0);
  double total = 0.0;
  double clamped = 0.0;
  bool any_positive = false;
  for (std::size_t t = 0; t < s; ++t) {
    const double lambda = f00[t].real();
    total += std::abs(lambda);
    if (lambda < 0.0) {
      clamped += -lambda;
      continue;
    }
    if (t == 0) continue;
    if (lambda > 0.0) any_positive = true;
    amplitude_[t] = std::sqrt(lambda * inv_s);
  }
  clamped_fraction_ = total > 0.0 ? clamped / total : 0.0;
  if (!any_positive) throw DegenerateError("reference channel spectrum is zero outside the zero frequency");

  const std::vector<Complex> half00 = rfft_.forward(row0);
  for (int g = 1; g < spec_.channels(); ++g) {
    const std::vector<Complex> f0g = rfft_.forward(spec_.covrow.at(0, g));
    std::vector<Complex> h(f0g.size());
    for (std::size_t k = 0; k < h.size(); ++k) {
      const double lambda = std::max(half00[k].real(), 0.0);
      h[k] = f0g[k] / (lambda + kTransferEpsilon);
    }
    transfer_.push_back(std::move(h));
  }
}

void Sampler::apply_transfer(Field3& field) const {
  if (field.dims() != spec_.dims() || field.channels() != spec_.channels()) {
    throw DimensionError("apply_transfer: field does not match the MOGRF spec");
  }
  if (spec_.channels() == 1) return;
  const double inv_s = 1.0 / static_cast<double>(field.voxels());
  const double mu0 = spec_.means[0];
  std::vector<double> centred(field.channel(0).begin(), field.channel(0).end());
  for (double& v : centred) v -= mu0;
  const std::vector<Complex> x0 = rfft_.forward(centred);
  std::vector<Complex> xg(x0.size());
  for (int g = 1; g < spec_.channels(); ++g) {
    const auto& h = transfer_[static_cast<std::size_t>(g - 1)];
    for (std::size_t k = 0; k < xg.size(); ++k) xg[k] = h[k] * x0[k];
    auto out = field.channel(g);
    rfft_.inverse(xg, out);
    const double mu = spec_.means[static_cast<std::size_t>(g)];
    for (double& v : out) v = v * inv_s + mu;
  }
}

Field3 Sampler::assemble(const std::vector<Complex>& y, bool imaginary) const {
  Field3 out(spec_.channels(), spec_.dims());
  auto x0 = out.channel(0);
  const double mu0 = spec_.means[0];
  for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = mu0 + (imaginary ? y[i].imag() : y[i].real());
  apply_transfer(out);
  return out;
}

std::pair<Field3, Field3> Sampler::sample_pair(std::mt19937_64& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Complex> y(amplitude_.size());
  for (std::size_t t = 0; t < y.size(); ++t) {
    const double e1 = normal(rng);
    const double e2 = normal(rng);
    y[t] = amplitude_[t] * Complex(e1, e2);
  }
  cfft_.forward(y);
  return {assemble(y, false), assemble(y, true)};
}

Field3 Sampler::sample(std::mt19937_64& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Complex> y(amplitude_.size());
  for (std::size_t t = 0; t < y.size(); ++t) {
    const double e1 = normal(rng);
    const double e2 = normal(rng);
    y[t] = amplitude_[t] * Complex(e1, e2);
  }
  cfft_.forward(y);
  return assemble(y, false);
}

Field3 sample(const MogrfSpec& spec, std::mt19937_64& rng) { return Sampler(spec).sample(rng); }

CovCheck empirical_cov_check(const MogrfSpec& spec, int n_samples, std::uint64_t seed) {
  if (n_samples < 2) throw ValidationError("empirical_cov_check needs at least two samples");
  const Sampler sampler(spec);
  std::mt19937_64 rng(seed);
  const auto pairs = select_pairs(spec.channels(), PairSelection::ReferenceRow);

  CovCheck out;
  out.empirical.dims = spec.dims();
  out.empirical.channels = spec.channels();
  out.empirical.pairs = pairs;
  out.empirical.values.assign(pairs.size(), std::vector<double>(spec.dims().voxels(), 0.0));

  auto accumulate = [&](const Field3& f) {
    const CovarianceGrid c = stats::cov_from_stats(stats::two_point_stats(f, pairs));
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      for (std::size_t i = 0; i < c.values[p].size(); ++i) out.empirical.values[p][i] += c.values[p][i];
    }
  };
  int drawn = 0;
  while (drawn < n_samples) {
    auto [a, b] = sampler.sample_pair(rng);
    accumulate(a);
    ++drawn;
    if (drawn < n_samples) {
      accumulate(b);
      ++drawn;
    }
  }

  double max_target = 0.0;
  double max_diff = 0.0;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto& target = spec.covrow.at(0, pairs[p].second);
    for (std::size_t i = 0; i < target.size(); ++i) {
      double& e = out.empirical.values[p][i];
      e /= n_samples;
      max_target = std::max(max_target, std::abs(target[i]));
      max_diff = std::max(max_diff, std::abs(e - target[i]));
    }
  }
  out.max_rel_error = max_target > 0.0 ? max_diff / max_target : max_diff;
  return out;
}

}  // namespace microsynth::mogrf
