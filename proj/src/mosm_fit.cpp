#include "microsynth/mosm_fit.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <ceres/ceres.h>

#include "microsynth/errors.hpp"

namespace microsynth::mosm {

namespace {

// Per (channel, mixture): weight, log-Cholesky (l00, l10, l11, l20, l21, l22),
// mean xyz, delay xyz, phase.
constexpr int kBlock = 14;

template <typename T>
using Mat3 = Eigen::Matrix<T, 3, 3>;
template <typename T>
using Vec3 = Eigen::Matrix<T, 3, 1>;

template <typename T>
Mat3<T> precision_from(const T* p) {
  Mat3<T> l = Mat3<T>::Zero();
  l(0, 0) = exp(p[1]);
  l(1, 0) = p[2];
  l(1, 1) = exp(p[3]);
  l(2, 0) = p[4];
  l(2, 1) = p[5];
  l(2, 2) = exp(p[6]);
  return l * l.transpose();
}

template <typename T>
Mat3<T> inverse3(const Mat3<T>& m, T& det) {
  Mat3<T> adj;
  adj(0, 0) = m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1);
  adj(0, 1) = m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2);
  adj(0, 2) = m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1);
  adj(1, 0) = m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2);
  adj(1, 1) = m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0);
  adj(1, 2) = m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2);
  adj(2, 0) = m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0);
  adj(2, 1) = m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1);
  adj(2, 2) = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  det = m(0, 0) * adj(0, 0) + m(0, 1) * adj(1, 0) + m(0, 2) * adj(2, 0);
  return adj / det;
}

template <typename T>
T cross_value(const T* b, const T* g, const Eigen::Vector3d& r) {
  const Mat3<T> ab = precision_from(b);
  const Mat3<T> ag = precision_from(g);
  T det_sum;
  const Mat3<T> sum_inv = inverse3<T>(ab + ag, det_sum);
  const Mat3<T> a = T(2.0) * ab * sum_inv * ag;
  const Vec3<T> mb(b[7], b[8], b[9]);
  const Vec3<T> mg(g[7], g[8], g[9]);
  const Vec3<T> mean = sum_inv * (ab * mg + ag * mb);
  const Vec3<T> dm = mb - mg;
  const T w = b[0] * g[0] * exp(T(-0.25) * dm.dot(sum_inv * dm));
  const Vec3<T> tau(T(r[0]) + b[10] - g[10], T(r[1]) + b[11] - g[11], T(r[2]) + b[12] - g[12]);
  const T phase = b[13] - g[13];
  const T det_a = a.determinant();
  const T alpha = w * T(std::pow(2.0 * std::numbers::pi, 1.5)) * sqrt(det_a);
  return alpha * exp(T(-0.5) * tau.dot(a * tau)) * cos(tau.dot(mean) + phase);
}

struct OffsetResidual {
  Eigen::Vector3d r;
  std::vector<ChannelPair> pairs;
  std::vector<double> target;  // per pair
  int mixtures;

  template <typename T>
  bool operator()(T const* const* blocks, T* residuals) const {
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      T sum = T(0.0);
      for (int q = 0; q < mixtures; ++q) {
        sum += cross_value<T>(blocks[pairs[p].first * mixtures + q], blocks[pairs[p].second * mixtures + q], r);
      }
      residuals[p] = sum - T(target[p]);
    }
    return true;
  }
};

std::vector<double> pack(const MosmParams& params) {
  std::vector<double> x(static_cast<std::size_t>(kBlock * params.channels * params.mixtures));
  for (int c = 0; c < params.channels; ++c) {
    for (int q = 0; q < params.mixtures; ++q) {
      const Component& comp = params.at(c, q);
      double* p = &x[static_cast<std::size_t>(kBlock * (c * params.mixtures + q))];
      const Eigen::Matrix3d l = comp.precision.llt().matrixL();
      p[0] = comp.weight;
      p[1] = std::log(l(0, 0));
      p[2] = l(1, 0);
      p[3] = std::log(l(1, 1));
      p[4] = l(2, 0);
      p[5] = l(2, 1);
      p[6] = std::log(l(2, 2));
      for (int k = 0; k < 3; ++k) {
        p[7 + k] = comp.mean[k];
        p[10 + k] = comp.delay[k];
      }
      p[13] = comp.phase;
    }
  }
  return x;
}

MosmParams unpack(const std::vector<double>& x, int channels, int mixtures) {
  MosmParams params(channels, mixtures);
  for (int c = 0; c < channels; ++c) {
    for (int q = 0; q < mixtures; ++q) {
      const double* p = &x[static_cast<std::size_t>(kBlock * (c * mixtures + q))];
      Component& comp = params.at(c, q);
      comp.weight = p[0];
      comp.precision = precision_from(p);
      for (int k = 0; k < 3; ++k) {
        comp.mean[k] = p[7 + k];
        comp.delay[k] = p[10 + k];
      }
      comp.phase = std::fmod(p[13], 2.0 * std::numbers::pi);
      if (comp.phase < 0.0) comp.phase += 2.0 * std::numbers::pi;
    }
  }
  return params;
}

}  // namespace

FitResult fit_mosm(const CovarianceGrid& empirical, int mixtures, const FitOptions& options) {
  empirical.validate();
  if (mixtures < 1 || mixtures > 16) throw ValidationError("fit_mosm: Q must lie in [1, 16]");
  if (options.restarts < 1) throw ValidationError("fit_mosm: need at least one start");
  const int channels = empirical.channels;
  const Dims& d = empirical.dims;
  const std::size_t count = d.voxels() * empirical.pairs.size();

  FitResult best;
  best.residual = std::numeric_limits<double>::infinity();
  for (const auto& v : empirical.values) {
    for (double e : v) best.energy += e * e;
  }
  best.energy /= static_cast<double>(count);

  std::vector<MosmParams> starts;
  if (options.warm_start) {
    options.warm_start->validate();
    if (options.warm_start->channels != channels || options.warm_start->mixtures != mixtures) {
      throw ValidationError("fit_mosm: warm start has the wrong shape");
    }
    starts.push_back(*options.warm_start);
  }
  const int random_starts = options.restarts - static_cast<int>(starts.size());
  if (random_starts > 0) {
    auto drawn = sample_params_lhs(options.bounds, random_starts, mixtures, channels, options.seed);
    starts.insert(starts.end(), drawn.begin(), drawn.end());
  }

  int budget = options.max_evaluations;
  for (const auto& start : starts) {
    if (budget <= 0) break;
    std::vector<double> x = pack(start);
    ceres::Problem problem;
    std::vector<double*> blocks;
    for (int b = 0; b < channels * mixtures; ++b) {
      blocks.push_back(&x[static_cast<std::size_t>(kBlock * b)]);
      problem.AddParameterBlock(blocks.back(), kBlock);
    }
    for (std::int64_t z = 0; z < d.z; ++z) {
      for (std::int64_t y = 0; y < d.y; ++y) {
        for (std::int64_t ix = 0; ix < d.x; ++ix) {
          auto* functor = new OffsetResidual{lattice_offset(d, ix, y, z), empirical.pairs, {}, mixtures};
          for (const auto& v : empirical.values) functor->target.push_back(v[d.index(ix, y, z)]);
          auto* cost = new ceres::DynamicAutoDiffCostFunction<OffsetResidual, 4>(functor);
          for (int b = 0; b < channels * mixtures; ++b) cost->AddParameterBlock(kBlock);
          cost->SetNumResiduals(static_cast<int>(empirical.pairs.size()));
          problem.AddResidualBlock(cost, nullptr, blocks);
        }
      }
    }
    ceres::Solver::Options so;
    so.linear_solver_type = ceres::DENSE_QR;
    so.max_num_iterations = std::min(options.max_iterations_per_start, budget);
    so.function_tolerance = 1e-14;
    so.gradient_tolerance = 1e-16;
    so.parameter_tolerance = 1e-14;
    so.num_threads = 1;
    so.logging_type = ceres::SILENT;
    ceres::Solver::Summary summary;
    ceres::Solve(so, &problem, &summary);
    budget -= static_cast<int>(summary.iterations.size());
    ++best.restarts_run;

    const double residual = 2.0 * summary.final_cost / static_cast<double>(count);
    if (std::isfinite(residual) && residual < best.residual) {
      best.residual = residual;
      best.params = unpack(x, channels, mixtures);
      best.converged = summary.termination_type == ceres::CONVERGENCE;
    }
  }
  if (!std::isfinite(best.residual)) throw ConvergenceError("fit_mosm: no start produced a finite residual");
  if (budget <= 0 && best.restarts_run < static_cast<int>(starts.size())) best.converged = false;
  return best;
}

}  // namespace microsynth::mosm
