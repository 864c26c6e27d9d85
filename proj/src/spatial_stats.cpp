#include "microsynth/spatial_stats.hpp"

#include <cmath>
#include <set>

#include "microsynth/errors.hpp"

namespace microsynth::stats {

namespace {

void check_pairs(const Field3& field, std::span<const ChannelPair> pairs) {
  if (pairs.empty()) throw ValidationError("no channel pairs selected");
  for (const auto& p : pairs) {
    if (p.first < 0 || p.first >= field.channels() || p.second < 0 || p.second >= field.channels()) {
      throw ValidationError("channel pair out of range for a " + std::to_string(field.channels()) + "-channel field");
    }
  }
}

Dims collapse(Dims d, Axis normal) {
  switch (normal) {
    case Axis::X: d.x = 1; break;
    case Axis::Y: d.y = 1; break;
    case Axis::Z: d.z = 1; break;
  }
  return d;
}

// Volume-grid index of every offset on the plane through r = 0 with the given
// normal, in the plane's own x-fastest order.
std::vector<std::size_t> plane_indices(const Dims& volume, Axis normal) {
  const Dims pd = collapse(volume, normal);
  std::vector<std::size_t> idx;
  idx.reserve(pd.voxels());
  for (std::int64_t z = 0; z < pd.z; ++z) {
    for (std::int64_t y = 0; y < pd.y; ++y) {
      for (std::int64_t x = 0; x < pd.x; ++x) idx.push_back(volume.index(x, y, z));
    }
  }
  return idx;
}

}  // namespace

StatsMap two_point_stats(const Field3& field, std::span<const ChannelPair> pairs) {
  if (field.empty()) throw DimensionError("two_point_stats: empty field");
  check_pairs(field, pairs);
  const Dims& d = field.dims();
  const RealFft3 fft(d);
  const double s = static_cast<double>(field.voxels());
  const double scale = 1.0 / (s * s);

  std::vector<std::vector<Complex>> spectra(static_cast<std::size_t>(field.channels()));
  auto spectrum = [&](int c) -> const std::vector<Complex>& {
    auto& m = spectra[static_cast<std::size_t>(c)];
    if (m.empty()) m = fft.forward(field.channel(c));
    return m;
  };

  StatsMap out;
  out.dims = d;
  out.channels = field.channels();
  out.pairs.assign(pairs.begin(), pairs.end());
  out.means = field.channel_means();
  std::vector<Complex> cross(fft.spectrum_size());
  for (const auto& p : pairs) {
    const auto& mb = spectrum(p.first);
    const auto& mg = spectrum(p.second);
    for (std::size_t k = 0; k < cross.size(); ++k) cross[k] = std::conj(mb[k]) * mg[k];
    std::vector<double> values(field.voxels());
    fft.inverse(cross, values);
    for (double& v : values) v *= scale;
    out.values.push_back(std::move(values));
  }
  return out;
}

StatsMap two_point_stats(const Field3& field, PairSelection selection) {
  const auto pairs = select_pairs(field.channels(), selection);
  return two_point_stats(field, pairs);
}

StatsMap two_point_stats_bruteforce(const Field3& field, std::span<const ChannelPair> pairs) {
  if (field.empty()) throw DimensionError("two_point_stats_bruteforce: empty field");
  if (field.voxels() > kBruteForceMaxVoxels) {
    throw ValidationError("brute-force statistics limited to " + std::to_string(kBruteForceMaxVoxels) +
                          " voxels, field has " + std::to_string(field.voxels()));
  }
  check_pairs(field, pairs);
  const Dims& d = field.dims();
  StatsMap out;
  out.dims = d;
  out.channels = field.channels();
  out.pairs.assign(pairs.begin(), pairs.end());
  out.means = field.channel_means();
  const double inv_s = 1.0 / static_cast<double>(field.voxels());
  for (const auto& p : pairs) {
    std::vector<double> values(field.voxels(), 0.0);
    for (std::int64_t rz = 0; rz < d.z; ++rz) {
      for (std::int64_t ry = 0; ry < d.y; ++ry) {
        for (std::int64_t rx = 0; rx < d.x; ++rx) {
          double sum = 0.0;
          for (std::int64_t z = 0; z < d.z; ++z) {
            for (std::int64_t y = 0; y < d.y; ++y) {
              for (std::int64_t x = 0; x < d.x; ++x) {
                sum += field.at(p.first, x, y, z) *
                       field.at(p.second, (x + rx) % d.x, (y + ry) % d.y, (z + rz) % d.z);
              }
            }
          }
          values[d.index(rx, ry, rz)] = sum * inv_s;
        }
      }
    }
    out.values.push_back(std::move(values));
  }
  return out;
}

CovarianceGrid cov_from_stats(const StatsMap& stats) {
  stats.validate();
  if (stats.means.size() != static_cast<std::size_t>(stats.channels)) {
    throw DimensionError("statistics carry " + std::to_string(stats.means.size()) + " means for " +
                         std::to_string(stats.channels) + " channels");
  }
  CovarianceGrid cov;
  cov.dims = stats.dims;
  cov.channels = stats.channels;
  cov.pairs = stats.pairs;
  cov.values = stats.values;
  for (std::size_t i = 0; i < cov.pairs.size(); ++i) {
    const double shift = stats.means[static_cast<std::size_t>(cov.pairs[i].first)] *
                         stats.means[static_cast<std::size_t>(cov.pairs[i].second)];
    for (double& v : cov.values[i]) v -= shift;
  }
  return cov;
}

StatsMap stats_from_cov(const CovarianceGrid& cov, std::span<const double> means) {
  cov.validate();
  if (means.size() != static_cast<std::size_t>(cov.channels)) {
    throw DimensionError("stats_from_cov: " + std::to_string(means.size()) + " means for " +
                         std::to_string(cov.channels) + " channels");
  }
  StatsMap stats;
  stats.dims = cov.dims;
  stats.channels = cov.channels;
  stats.pairs = cov.pairs;
  stats.values = cov.values;
  stats.means.assign(means.begin(), means.end());
  for (std::size_t i = 0; i < stats.pairs.size(); ++i) {
    const double shift = means[static_cast<std::size_t>(stats.pairs[i].first)] *
                         means[static_cast<std::size_t>(stats.pairs[i].second)];
    for (double& v : stats.values[i]) v += shift;
  }
  return stats;
}

Dims OrthoStats::volume_dims() const {
  const Dims& px = planes[0].dims;  // (1, Dy, Dz)
  const Dims& py = planes[1].dims;  // (Dx, 1, Dz)
  const Dims& pz = planes[2].dims;  // (Dx, Dy, 1)
  if (px.x != 1 || py.y != 1 || pz.z != 1) throw ValidationError("orthogonal planes have wrong collapsed axes");
  if (py.x != pz.x || px.y != pz.y || px.z != py.z) {
    throw DimensionError("orthogonal planes disagree on the volume size: " + to_string(px) + ", " + to_string(py) +
                         ", " + to_string(pz));
  }
  return {py.x, px.y, px.z};
}

std::size_t OrthoStats::element_count() const {
  std::size_t n = 0;
  for (const auto& p : planes) n += p.dims.voxels() * pairs.size();
  return n;
}

OrthoStats ortho_stats(const Field3& field, std::span<const ChannelPair> pairs) {
  const StatsMap full = two_point_stats(field, pairs);
  OrthoStats out;
  out.channels = field.channels();
  out.pairs.assign(pairs.begin(), pairs.end());
  for (Axis normal : {Axis::X, Axis::Y, Axis::Z}) {
    auto& plane = out.planes[static_cast<std::size_t>(normal)];
    plane.normal = normal;
    plane.dims = collapse(field.dims(), normal);
    const auto idx = plane_indices(field.dims(), normal);
    for (const auto& v : full.values) {
      std::vector<double> pv(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) pv[i] = v[idx[i]];
      plane.values.push_back(std::move(pv));
    }
  }
  return out;
}

OrthoStats ortho_stats(const Field3& field, PairSelection selection) {
  const auto pairs = select_pairs(field.channels(), selection);
  return ortho_stats(field, pairs);
}

OrthoStats ortho_stats(std::span<const AxisImage> images, PairSelection selection) {
  if (images.size() != 3) throw ValidationError("dimensionality expansion needs exactly three orthogonal images");
  std::set<Axis> seen;
  for (const auto& im : images) {
    if (!seen.insert(im.normal).second) {
      throw ValidationError("image axis " + to_string(im.normal) + " declared more than once");
    }
    if (im.image.empty()) throw ValidationError("image for axis " + to_string(im.normal) + " is empty");
    if (im.image.dims().extent(im.normal) != 1) {
      throw DimensionError("image declared normal to " + to_string(im.normal) + " has extent " +
                           std::to_string(im.image.dims().extent(im.normal)) + " along that axis");
    }
    if (im.image.channels() != images[0].image.channels()) {
      throw ValidationError("images have different channel counts");
    }
  }
  OrthoStats out;
  out.channels = images[0].image.channels();
  out.pairs = select_pairs(out.channels, selection);
  for (const auto& im : images) {
    auto& plane = out.planes[static_cast<std::size_t>(im.normal)];
    plane.normal = im.normal;
    plane.dims = im.image.dims();
    plane.values = two_point_stats(im.image, out.pairs).values;
  }
  out.volume_dims();
  return out;
}

OrthoStatsObjective::OrthoStatsObjective(OrthoStats target, LossNormalization norm)
    : target_(std::move(target)), norm_(norm), dims_(target_.volume_dims()), fft_(dims_) {
  for (const auto& p : target_.pairs) {
    if (p.first < 0 || p.first >= target_.channels || p.second < 0 || p.second >= target_.channels) {
      throw ValidationError("target statistics reference a channel out of range");
    }
  }
  for (const auto& plane : target_.planes) {
    if (plane.values.size() != target_.pairs.size()) throw ValidationError("target plane is missing pair grids");
    for (const auto& v : plane.values) {
      if (v.size() != plane.dims.voxels()) throw DimensionError("target plane grid has the wrong size");
    }
  }
}

StatsLoss OrthoStatsObjective::evaluate(const Field3& field, bool with_gradient) const {
  if (field.dims() != dims_ || field.channels() != target_.channels) {
    throw DimensionError("field " + to_string(field.dims()) + " does not match target statistics for " +
                         to_string(dims_));
  }
  const std::size_t s_count = field.voxels();
  const double s = static_cast<double>(s_count);
  const double scale = 1.0 / (s * s);
  const double norm = norm_ == LossNormalization::Mean ? 1.0 / static_cast<double>(target_.element_count()) : 1.0;
  const std::size_t nspec = fft_.spectrum_size();

  std::vector<std::vector<Complex>> spectra(static_cast<std::size_t>(field.channels()));
  for (int c = 0; c < field.channels(); ++c) spectra[static_cast<std::size_t>(c)] = fft_.forward(field.channel(c));

  std::array<std::vector<std::size_t>, 3> idx;
  for (Axis a : {Axis::X, Axis::Y, Axis::Z}) idx[static_cast<std::size_t>(a)] = plane_indices(dims_, a);

  StatsLoss out;
  std::vector<std::vector<Complex>> grad_spectra;
  if (with_gradient) grad_spectra.assign(spectra.size(), std::vector<Complex>(nspec, Complex{}));

  std::vector<Complex> cross(nspec);
  std::vector<double> full(s_count);
  std::vector<double> residual;
  std::vector<Complex> residual_spec;
  if (with_gradient) {
    residual.assign(s_count, 0.0);
    residual_spec.resize(nspec);
  }

  for (std::size_t pi = 0; pi < target_.pairs.size(); ++pi) {
    const auto& p = target_.pairs[pi];
    const auto& mb = spectra[static_cast<std::size_t>(p.first)];
    const auto& mg = spectra[static_cast<std::size_t>(p.second)];
    for (std::size_t k = 0; k < nspec; ++k) cross[k] = std::conj(mb[k]) * mg[k];
    fft_.inverse(cross, full);
    for (double& v : full) v *= scale;

    for (std::size_t a = 0; a < 3; ++a) {
      const auto& t = target_.planes[a].values[pi];
      double sum = 0.0;
      for (std::size_t i = 0; i < idx[a].size(); ++i) {
        const double diff = full[idx[a][i]] - t[i];
        sum += diff * diff;
        if (with_gradient) residual[idx[a][i]] += 2.0 * norm * diff;
      }
      out.plane_err[a] += norm * sum;
    }

    if (with_gradient) {
      fft_.forward(residual, residual_spec);
      auto& gb = grad_spectra[static_cast<std::size_t>(p.first)];
      auto& gg = grad_spectra[static_cast<std::size_t>(p.second)];
      for (std::size_t k = 0; k < nspec; ++k) {
        gb[k] += std::conj(residual_spec[k]) * mg[k];
        gg[k] += residual_spec[k] * mb[k];
      }
      for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t i : idx[a]) residual[i] = 0.0;
      }
    }
  }
  out.err = out.plane_err[0] + out.plane_err[1] + out.plane_err[2];

  if (with_gradient) {
    out.grad = Field3(field.channels(), dims_);
    for (int c = 0; c < field.channels(); ++c) {
      auto g = out.grad.channel(c);
      fft_.inverse(grad_spectra[static_cast<std::size_t>(c)], g);
      for (double& v : g) v *= scale;
    }
  }
  return out;
}

std::array<double, 3> OrthoStatsObjective::max_abs_error(const Field3& field) const {
  const OrthoStats achieved = ortho_stats(field, target_.pairs);
  std::array<double, 3> out{};
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t pi = 0; pi < target_.pairs.size(); ++pi) {
      const auto& t = target_.planes[a].values[pi];
      const auto& v = achieved.planes[a].values[pi];
      for (std::size_t i = 0; i < t.size(); ++i) out[a] = std::max(out[a], std::abs(v[i] - t[i]));
    }
  }
  return out;
}

StatsLoss stats_loss_and_grad(const Field3& field, const OrthoStats& target, LossNormalization norm) {
  return OrthoStatsObjective(target, norm).evaluate(field, true);
}

}  // namespace microsynth::stats
