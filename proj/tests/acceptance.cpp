// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>

#include "microsynth/cases.hpp"
#include "microsynth/denoisers.hpp"
#include "microsynth/diffusion.hpp"
#include "microsynth/io.hpp"
#include "microsynth/mogrf.hpp"
#include "microsynth/mosm.hpp"
#include "microsynth/pipeline.hpp"
#include "microsynth/rogsh.hpp"
#include "microsynth/spatial_stats.hpp"
#include "test_util.hpp"

using namespace microsynth;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

// Direct double loop: f(r) = mean over x of a(x) b(x + r), periodic.
std::vector<double> brute_correlation(const Field3& f, int beta, int gamma) {
  const Dims& d = f.dims();
  std::vector<double> out(d.voxels(), 0.0);
  for (std::int64_t rz = 0; rz < d.z; ++rz)
    for (std::int64_t ry = 0; ry < d.y; ++ry)
      for (std::int64_t rx = 0; rx < d.x; ++rx) {
        double s = 0.0;
        for (std::int64_t z = 0; z < d.z; ++z)
          for (std::int64_t y = 0; y < d.y; ++y)
            for (std::int64_t x = 0; x < d.x; ++x)
              s += f.at(beta, x, y, z) * f.at(gamma, (x + rx) % d.x, (y + ry) % d.y, (z + rz) % d.z);
        out[d.index(rx, ry, rz)] = s / static_cast<double>(d.voxels());
      }
  return out;
}

// Accepted kernels at 16^3, H = 3, under the default bounds; shared by 3, 4 and 8.
const pipeline::GenKernelsResult& accepted_kernels() {
  static const pipeline::GenKernelsResult result = [] {
    pipeline::GenKernelsOptions opt;
    opt.target_count = 5;
    opt.dims = {16, 16, 16};
    opt.seed = 2024;
    return pipeline::gen_kernels(opt);
  }();
  return result;
}

Eigen::Vector3d random_point(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  return {u(rng), u(rng), u(rng)};
}

rogsh::EulerZXZ random_orientation(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> cosine(-1.0, 1.0);
  return {angle(rng), std::acos(cosine(rng)), angle(rng)};
}

Outcome criterion1() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> ext(1, 6), ch(1, 3);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Dims d{ext(rng), ext(rng), ext(rng)};
    const int h = ch(rng);
    const Field3 f = testutil::random_field(h, d, 1000 + trial);
    const StatsMap fft = stats::two_point_stats(f, PairSelection::Full);
    for (std::size_t p = 0; p < fft.pairs.size(); ++p) {
      const auto brute = brute_correlation(f, fft.pairs[p].first, fft.pairs[p].second);
      for (std::size_t i = 0; i < brute.size(); ++i) worst = std::max(worst, std::abs(brute[i] - fft.values[p][i]));
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-12 && secs < 10.0, fmt("max abs diff %.3e over 200 fields, %.2f s", worst, secs)};
}

Outcome criterion2() {
  const auto t0 = Clock::now();
  const Dims d{8, 8, 8};
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Field3 target_field = testutil::random_field(3, d, 5000 + trial);
    const stats::OrthoStats target = stats::ortho_stats(target_field);
    const stats::OrthoStatsObjective objective(target);
    Field3 x = testutil::random_field(3, d, 6000 + trial);
    const auto grad = objective.evaluate(x, true).grad;
    double gmax = 0.0;
    for (double g : grad.data()) gmax = std::max(gmax, std::abs(g));
    const double h = 1e-4;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double keep = x.data()[k];
      x.data()[k] = keep + h;
      const double up = objective.evaluate(x, false).err;
      x.data()[k] = keep - h;
      const double down = objective.evaluate(x, false).err;
      x.data()[k] = keep;
      const double fd = (up - down) / (2.0 * h);
      // Relative to the component, floored at 1e-3 of the largest component.
      const double scale = std::max(std::abs(fd), 1e-3 * gmax);
      worst = std::max(worst, std::abs(grad.data()[k] - fd) / scale);
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 60.0, fmt("max relative error %.3e over 20 instances, %.2f s", worst, secs)};
}

Outcome criterion3() {
  const auto t0 = Clock::now();
  const auto& kernels = accepted_kernels();
  bool ok = kernels.accepted.size() == 5;
  double worst4096 = 0.0;
  std::string per;
  for (std::size_t i = 0; i < kernels.accepted.size(); ++i) {
    const auto spec = mogrf::make_spec(kernels.accepted[i].covrow);
    const double e256 = mogrf::empirical_cov_check(spec, 256, 300 + i).max_rel_error;
    const double e4096 = mogrf::empirical_cov_check(spec, 4096, 400 + i).max_rel_error;
    ok = ok && e4096 < 0.05 && e4096 < e256;
    worst4096 = std::max(worst4096, e4096);
    per += fmt(" %.3f/%.3f", e256, e4096);
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 600.0;
  return {ok, fmt("sup rel error n=256/n=4096:%s; worst %.4f, %.1f s", per.c_str(), worst4096, secs)};
}

Outcome criterion4() {
  const auto& kernels = accepted_kernels();
  const Dims d{128, 128, 128};
  auto t0 = Clock::now();
  const mogrf::Sampler sampler(mogrf::make_spec(mosm::kernel_to_grid(kernels.accepted.at(0).params, d)));
  const double setup = seconds_since(t0);
  std::mt19937_64 rng(4);
  t0 = Clock::now();
  const Field3 f = sampler.sample(rng);
  const double secs = seconds_since(t0);
  const bool finite = std::all_of(f.data().begin(), f.data().end(), [](double v) { return std::isfinite(v); });
  return {finite && secs < 5.0, fmt("one 128^3 H=3 sample in %.2f s (kernel grid + plan %.2f s)", secs, setup)};
}

Outcome criterion5() {
  const auto t0 = Clock::now();
  const mosm::ParamBounds bounds;
  const Dims d{16, 16, 16};
  const auto sets = mosm::sample_params_lhs(bounds, 1000, 4, 3, 55);
  int accepted = 0, psd_fail = 0, bound_fail = 0, diag_fail = 0;
  double min_ratio = 1.0, worst_bound = 0.0;
  std::mt19937_64 rng(5);
  for (const auto& p : sets) {
    for (int b = 0; b < p.channels; ++b) {
      for (int q = 0; q < p.mixtures; ++q) {
        const auto c = mosm::derive_cross_params(p, b, b, q);
        const auto& comp = p.at(b, q);
        if (c.precision != comp.precision || c.mean != comp.mean || c.weight != comp.weight * comp.weight ||
            !c.delay.isZero(0.0) || c.phase != 0.0) {
          ++diag_fail;
        }
      }
    }
    if (!mosm::validate_kernel(mosm::kernel_to_grid(p, d)).accepted) continue;
    ++accepted;
    const auto spectral = mosm::check_cross_spectral_psd(p);
    min_ratio = std::min(min_ratio, spectral.min_ratio);
    if (spectral.min_ratio < -1e-9) ++psd_fail;
    const Eigen::MatrixXd k0 = mosm::eval_kernel(p, Eigen::Vector3d::Zero());
    // Lattice offsets plus random off-lattice points.
    const auto full = mosm::kernel_to_full_grid(p, d);
    auto check = [&](int b, int g, double v) {
      const double bound = std::sqrt(k0(b, b) * k0(g, g));
      const double excess = std::abs(v) - bound;
      worst_bound = std::max(worst_bound, excess / bound);
      if (excess > 1e-12 * bound) ++bound_fail;
    };
    for (std::size_t pi = 0; pi < full.pairs.size(); ++pi) {
      for (double v : full.values[pi]) check(full.pairs[pi].first, full.pairs[pi].second, v);
    }
    for (int s = 0; s < 20; ++s) {
      const Eigen::MatrixXd k = mosm::eval_kernel(p, random_point(rng));
      for (int b = 0; b < p.channels; ++b)
        for (int g = 0; g < p.channels; ++g) check(b, g, k(b, g));
    }
  }
  const double secs = seconds_since(t0);
  const bool ok = accepted > 0 && psd_fail == 0 && bound_fail == 0 && diag_fail == 0 && secs < 300.0;
  return {ok, fmt("%d/1000 accepted; PSD failures %d (min eig ratio %.2e); |k| bound failures %d (max excess %.2e); "
                  "inexact diagonal reductions %d; %.1f s",
                  accepted, psd_fail, min_ratio, bound_fail, worst_bound, diag_fail, secs)};
}

Outcome criterion6() {
  const auto t0 = Clock::now();
  const Dims d{8, 8, 8};
  const auto params = testutil::smooth_params(1, 1.0, 0.02);
  const CovarianceGrid prior = mosm::kernel_to_full_grid(params, d);
  const auto denoiser = diffusion::gaussian_denoiser(prior, {});
  diffusion::SamplerConfig cfg;
  cfg.steps = 64;
  cfg.s_churn = 0.0;
  const int n = 4096;
  std::mt19937_64 rng(6);
  std::vector<double> acc(d.voxels(), 0.0), spatial_means;
  double grand = 0.0;
  for (int s = 0; s < n; ++s) {
    const Field3 x = diffusion::sample(nullptr, *denoiser, cfg, rng);
    const StatsMap st = stats::two_point_stats(x, PairSelection::Full);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += st.values[0][i] / n;
    double m = 0.0;
    for (double v : x.data()) m += v;
    m /= static_cast<double>(x.size());
    spatial_means.push_back(m);
    grand += m / n;
  }
  double var = 0.0;
  for (double m : spatial_means) var += (m - grand) * (m - grand);
  const double se = std::sqrt(var / (n - 1) / n);
  const auto& target = prior.values[0];
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < acc.size(); ++i) {
    num = std::max(num, std::abs(acc[i] - target[i]));
    den = std::max(den, std::abs(target[i]));
  }
  const double rel = num / den;
  const double z = std::abs(grand) / se;
  const double secs = seconds_since(t0);
  return {z <= 3.0 && rel < 0.05 && secs < 600.0,
          fmt("mean %.2e = %.2f SE; covariance sup rel error %.4f; %.1f s", grand, z, rel, secs)};
}

Outcome criterion7() {
  const auto t0 = Clock::now();
  const Dims d{4, 4, 4};
  const auto params = testutil::smooth_params(1, 1.0, 0.02);
  const CovarianceGrid prior = mosm::kernel_to_full_grid(params, d);
  const auto denoiser = diffusion::gaussian_denoiser(prior, {});
  const auto V = static_cast<int>(d.voxels());

  // Dense prior covariance over voxels.
  Eigen::MatrixXd C(V, V);
  for (int i = 0; i < V; ++i) {
    for (int j = 0; j < V; ++j) {
      const std::int64_t ix = i % 4, iy = (i / 4) % 4, iz = i / 16;
      const std::int64_t jx = j % 4, jy = (j / 4) % 4, jz = j / 16;
      C(i, j) = prior.values[0][d.index((jx - ix + 4) % 4, (jy - iy + 4) % 4, (jz - iz + 4) % 4)];
    }
  }
  std::mt19937_64 rng(7);
  const Field3 truth = mogrf::Sampler(mogrf::make_spec(mosm::kernel_to_grid(params, d))).sample(rng);
  diffusion::Mask mask(1, d);
  std::vector<int> known, unknown;
  for (int i = 0; i < V; ++i) {
    if ((i / 16) % 2 == 0) {
      mask.set(0, i % 4, (i / 4) % 4, i / 16, truth.data()[i]);
      known.push_back(i);
    } else {
      unknown.push_back(i);
    }
  }
  const auto nk = static_cast<Eigen::Index>(known.size()), nu = static_cast<Eigen::Index>(unknown.size());
  Eigen::MatrixXd Ckk(nk, nk), Cuk(nu, nk), Cuu(nu, nu);
  Eigen::VectorXd y(nk);
  for (Eigen::Index a = 0; a < nk; ++a) {
    y(a) = truth.data()[known[a]];
    for (Eigen::Index b = 0; b < nk; ++b) Ckk(a, b) = C(known[a], known[b]);
  }
  for (Eigen::Index a = 0; a < nu; ++a) {
    for (Eigen::Index b = 0; b < nk; ++b) Cuk(a, b) = C(unknown[a], known[b]);
    for (Eigen::Index b = 0; b < nu; ++b) Cuu(a, b) = C(unknown[a], unknown[b]);
  }
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(Ckk);
  const Eigen::VectorXd cond_mean = Cuk * ldlt.solve(y);
  const Eigen::MatrixXd cond_cov = Cuu - Cuk * ldlt.solve(Cuk.transpose());

  diffusion::SamplerConfig cfg;
  cfg.steps = 4096;
  cfg.s_churn = 1e9;  // gamma at its cap sqrt(2) - 1 on every step
  const int n = 4096;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(nu), s2 = Eigen::VectorXd::Zero(nu);
  bool known_exact = true;
  for (int s = 0; s < n; ++s) {
    const Field3 x = diffusion::sample(nullptr, *denoiser, cfg, rng, diffusion::inpaint_cond(mask, 1.0, cfg.steps));
    for (int k : known) known_exact = known_exact && x.data()[k] == truth.data()[k];
    for (Eigen::Index a = 0; a < nu; ++a) {
      const double v = x.data()[unknown[a]];
      s1(a) += v;
      s2(a) += v * v;
    }
  }
  double max_z = 0.0, max_bias = 0.0;
  for (Eigen::Index a = 0; a < nu; ++a) {
    const double m = s1(a) / n;
    const double var = (s2(a) - n * m * m) / (n - 1);
    max_z = std::max(max_z, std::abs(m - cond_mean(a)) / std::sqrt(var / n));
    max_bias = std::max(max_bias, std::abs(m - cond_mean(a)) / std::sqrt(cond_cov(a, a)));
  }
  const double secs = seconds_since(t0);
  return {known_exact && max_z <= 3.0,
          fmt("max |mean - oracle| = %.2f SE (%.3f conditional SD) over %d unknown voxels; known voxels %s; "
              "N=%d, max churn, %.1f s",
              max_z, max_bias, static_cast<int>(nu), known_exact ? "bit-exact" : "NOT exact", cfg.steps, secs)};
}

Outcome criterion8() {
  const auto t0 = Clock::now();
  const auto& kernels = accepted_kernels();
  const Dims d{16, 16, 16};
  int good = 0;
  double worst = 0.0;
  std::string per;
  for (int run = 0; run < 10; ++run) {
    const auto& kernel = kernels.accepted.at(static_cast<std::size_t>(run) % kernels.accepted.size());
    const auto denoiser = diffusion::gaussian_denoiser(mosm::kernel_to_full_grid(kernel.params, d), {});
    std::mt19937_64 rng(800 + run);
    const Field3 reference = mogrf::Sampler(mogrf::make_spec(kernel.covrow)).sample(rng);
    cases::ExpandOptions opt;
    opt.seed = 900 + run;
    double err = 0.0;
    try {
      const auto r = cases::expand(stats::ortho_stats(reference), *denoiser, opt);
      err = std::max({r.plane_err[0][0], r.plane_err[0][1], r.plane_err[0][2]});
    } catch (const std::exception& e) {
      err = INFINITY;
      per += fmt(" [run %d: %s]", run, e.what());
    }
    if (err <= 1e-5) ++good;
    worst = std::max(worst, err);
    per += fmt(" %.2e", err);
  }
  const double secs = seconds_since(t0);
  return {good >= 9 && secs < 1800.0,
          fmt("%d/10 runs with max per-plane error <= 1e-5; errors:%s; %.1f s", good, per.c_str(), secs)};
}

Outcome criterion9() {
  const fs::path dir = fs::temp_directory_path() / ("microsynth-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  pipeline::GenKernelsOptions kopt;
  kopt.target_count = 2;
  kopt.dims = {8, 8, 8};
  kopt.seed = 9;
  const auto gk = pipeline::gen_kernels(kopt);
  pipeline::write_kernels(dir / "kernels", gk, kopt);
  const auto kernels = pipeline::read_kernels(dir / "kernels");

  pipeline::DenoiserContext ctx;
  ctx.channels = 3;
  ctx.dims = kopt.dims;
  const nlohmann::json spec = {{"type", "gaussian"}, {"white_noise_variance", 0.05}};
  const std::vector<pipeline::DenoiserEntry> denoisers{{"g0", pipeline::make_denoiser(spec, ctx), spec}};

  pipeline::DatagenConfig cfg;
  cfg.replicates = 3;
  cfg.sampler.steps = 16;
  cfg.sampler.skip = 8;
  cfg.master_seed = 99;
  cfg.out_dir = dir / "data";
  cfg.dtype = io::DType::F64;
  const auto manifest = pipeline::datagen(kernels, denoisers, cfg);
  const auto reread = pipeline::DatasetManifest::from_json(io::read_json(cfg.out_dir / "manifest.json"));

  int reproduced = 0;
  std::set<std::uint64_t> seeds;
  for (const auto& e : reread.entries) {
    seeds.insert(e.seed);
    if (!e.ok) continue;
    const Field3 stored = io::read_field(cfg.out_dir / e.path);
    if (pipeline::regenerate_entry(e, kernels, denoisers, cfg).data() == stored.data()) ++reproduced;
  }
  fs::remove_all(dir);
  const bool ok = manifest.entries.size() == 6 && reread.entries.size() == 6 && reproduced == 6 && seeds.size() == 6;
  return {ok, fmt("%zu manifest entries, %d bit-reproduced from recorded seeds, %zu distinct seeds",
                  reread.entries.size(), reproduced, seeds.size())};
}

Outcome criterion10() {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> normal;
  double worst = 0.0, worst_sum = 0.0;
  bool monotone = true;
  for (int L : {7, 49, 50, 51, 300}) {
    std::vector<std::vector<double>> rows(50, std::vector<double>(static_cast<std::size_t>(L)));
    Eigen::MatrixXd X(50, L);
    for (int i = 0; i < 50; ++i)
      for (int j = 0; j < L; ++j) X(i, j) = rows[i][j] = normal(rng) * (1.0 + j % 5);
    const auto r = pipeline::pca_diversity(rows);

    const Eigen::MatrixXd centered = X.rowwise() - X.colwise().mean();
    const Eigen::MatrixXd gram = centered * centered.transpose();  // same non-zero spectrum
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    Eigen::VectorXd ev = eig.eigenvalues().reverse().cwiseMax(0.0);
    const double total = ev.sum();
    for (std::size_t k = 0; k < r.explained_variance_ratio.size(); ++k) {
      worst = std::max(worst, std::abs(r.explained_variance_ratio[k] - ev(static_cast<Eigen::Index>(k)) / total));
      if (k > 0 && r.explained_variance_ratio[k] > r.explained_variance_ratio[k - 1]) monotone = false;
    }
    double sum = 0.0;
    for (double v : r.explained_variance_ratio) sum += v;
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
  }
  return {worst <= 1e-10 && monotone && worst_sum <= 1e-12,
          fmt("max ratio diff %.2e vs eigendecomposition; non-increasing %s; |sum - 1| %.2e", worst,
              monotone ? "yes" : "no", worst_sum)};
}

Outcome criterion11() {
  std::mt19937_64 rng(11);
  const auto& group = rogsh::cubic_rotations();
  double worst_sym = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const auto g = random_orientation(rng);
    const auto base = rogsh::euler_to_coeffs(g);
    for (const auto& s : group) {
      const auto c = rogsh::euler_to_coeffs(rogsh::apply_crystal_symmetry(g, s));
      for (int k = 0; k < 3; ++k) worst_sym = std::max(worst_sym, std::abs(c[k] - base[k]));
    }
  }
  double worst_abs = 0.0;
  for (int i = 0; i < 1000000; ++i) {
    const auto c = rogsh::euler_to_coeffs(random_orientation(rng));
    for (double v : c) worst_abs = std::max(worst_abs, std::abs(v));
  }
  return {worst_sym <= 1e-10 && worst_abs <= 1.0 + 1e-9 && group.size() == 24,
          fmt("max symmetry deviation %.2e over 1e4 orientations x %zu rotations; max |coeff| %.9f over 1e6",
              worst_sym, group.size(), worst_abs)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"statistics oracle equivalence", criterion1},
      {"gradient correctness", criterion2},
      {"MOGRF fidelity", criterion3},
      {"MOGRF performance", criterion4},
      {"MOSM validity", criterion5},
      {"Gaussian-closure sampling", criterion6},
      {"conditional inpainting oracle", criterion7},
      {"dimensionality-expansion precision", criterion8},
      {"LGD loop arithmetic and reproducibility", criterion9},
      {"PCA correctness", criterion10},
      {"ROGSH properties", criterion11},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
