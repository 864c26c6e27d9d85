#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include <Eigen/Eigenvalues>

#include "microsynth/denoisers.hpp"
#include "microsynth/errors.hpp"
#include "microsynth/io.hpp"
#include "microsynth/mogrf.hpp"
#include "microsynth/pipeline.hpp"
#include "test_util.hpp"

using namespace microsynth;
using namespace microsynth::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("microsynth-pipeline-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<KernelEntry> two_kernels(Dims d) {
  std::vector<KernelEntry> out;
  for (int i = 0; i < 2; ++i) {
    KernelEntry k;
    k.id = "k" + std::to_string(i);
    k.params = testutil::smooth_params(3, 2.5 + i, 0.02);
    k.covrow = mosm::kernel_to_grid(*k.params, d);
    out.push_back(std::move(k));
  }
  return out;
}

DenoiserEntry gaussian_entry(const std::string& id, Dims d, double variance) {
  const nlohmann::json spec{{"type", "gaussian"}, {"white_noise_variance", variance}};
  return {id, make_denoiser(spec, {d, 3, {}}), spec};
}

DatagenConfig small_config(const fs::path& out) {
  DatagenConfig c;
  c.replicates = 3;
  c.sampler.steps = 8;
  c.sampler.skip = 4;
  c.master_seed = 1234;
  c.out_dir = out;
  return c;
}

// Explained-variance ratios from the eigenvalues of the sample covariance.
std::vector<double> oracle_ratios(const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd centred = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  std::vector<double> ev(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
  std::sort(ev.rbegin(), ev.rend());
  double total = 0.0;
  for (double v : ev) total += std::max(v, 0.0);
  for (double& v : ev) v = std::max(v, 0.0) / total;
  return ev;
}

}  // namespace

TEST(Pipeline, SeedsAreStableAndDistinct) {
  EXPECT_EQ(entry_seed(1, "k0", "d0", 0), entry_seed(1, "k0", "d0", 0));
  EXPECT_NE(entry_seed(1, "k0", "d0", 0), entry_seed(1, "k0", "d0", 1));
  EXPECT_NE(entry_seed(1, "k0", "d0", 0), entry_seed(1, "k1", "d0", 0));
  EXPECT_NE(entry_seed(1, "k0", "d0", 0), entry_seed(2, "k0", "d0", 0));
  EXPECT_NE(entry_seed(1, "k0", "d1", 0), entry_seed(1, "d1", "k0", 0));
  // splitmix64 of 0.
  EXPECT_EQ(mix64(0), 0xe220a8397b1dcdafULL);
}

TEST(Pipeline, GenKernelsDefaultBounds) {
  GenKernelsOptions opt;
  opt.target_count = 10;
  opt.dims = {32, 32, 32};
  opt.seed = 7;
  std::vector<nlohmann::json> events;
  const auto r = gen_kernels(opt, [&](const nlohmann::json& e) { events.push_back(e); });
  ASSERT_EQ(r.accepted.size(), 10u);
  EXPECT_GE(r.proposed, 10);
  EXPECT_EQ(events.size(), r.batches.size());
  int reasons = 0;
  for (const auto& [k, v] : r.rejection_reasons) reasons += v;
  EXPECT_EQ(reasons, r.proposed - 10);
  for (std::size_t i = 0; i < r.accepted.size(); ++i) {
    const auto& k = r.accepted[i];
    EXPECT_TRUE(k.verdict.accepted);
    EXPECT_LE(k.verdict.boundary_ratio, opt.periodicity_tol);
    EXPECT_TRUE(k.covrow.is_reference_row());
    EXPECT_EQ(k.id, "k000" + std::to_string(i));
  }
  std::cout << "[ info ] rejection fraction at 32^3: " << r.rejection_fraction() << " over " << r.proposed
            << " proposals\n";
}

TEST(Pipeline, GenKernelsWithRangeProbe) {
  GenKernelsOptions opt;
  opt.target_count = 3;
  opt.dims = {16, 16, 16};
  opt.seed = 5;
  opt.probe = true;
  opt.bounds.weight = {-0.004, 0.004};
  const auto r = gen_kernels(opt);
  ASSERT_EQ(r.accepted.size(), 3u);
  for (const auto& k : r.accepted) {
    EXPECT_GT(k.verdict.probe_max_abs, 0.0);
    EXPECT_LE(k.verdict.probe_max_abs, 1.0);
  }
}

TEST(Pipeline, GenKernelsDeterministic) {
  GenKernelsOptions opt;
  opt.target_count = 3;
  opt.dims = {16, 16, 16};
  opt.seed = 11;
  const auto a = gen_kernels(opt);
  opt.threads = 3;
  const auto b = gen_kernels(opt);
  ASSERT_EQ(a.accepted.size(), b.accepted.size());
  for (std::size_t i = 0; i < a.accepted.size(); ++i) {
    EXPECT_EQ(mosm::lhs_coordinates(a.accepted[i].params), mosm::lhs_coordinates(b.accepted[i].params));
    EXPECT_EQ(a.accepted[i].covrow.values, b.accepted[i].covrow.values);
  }
  EXPECT_EQ(a.proposed, b.proposed);
}

TEST(Pipeline, GenKernelsAbortsOnBadBounds) {
  GenKernelsOptions opt;
  opt.target_count = 5;
  opt.dims = {8, 8, 8};
  opt.batch_size = 8;
  opt.bounds.precision_root = {0.01, 0.02};  // coherence length far beyond the domain
  int batches = 0;
  try {
    gen_kernels(opt, [&](const nlohmann::json&) { ++batches; });
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("misconfigured"), std::string::npos);
  }
  EXPECT_EQ(batches, 10);
}

TEST(Pipeline, KernelsWriteAndRead) {
  GenKernelsOptions opt;
  opt.target_count = 2;
  opt.dims = {16, 16, 16};
  opt.seed = 3;
  const auto r = gen_kernels(opt);
  const fs::path dir = fresh_dir("kernels");
  write_kernels(dir, r, opt);
  const auto back = read_kernels(dir);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].id, r.accepted[0].id);
  EXPECT_EQ(back[1].covrow.values, r.accepted[1].covrow.values);
  ASSERT_TRUE(back[0].params.has_value());
  EXPECT_EQ(mosm::lhs_coordinates(*back[0].params), mosm::lhs_coordinates(r.accepted[0].params));
  const auto index = io::read_json(dir / "kernels.json");
  EXPECT_EQ(index.at("schema"), "microsynth.kernels/1");
  EXPECT_EQ(index.at("batches").size(), r.batches.size());
  fs::remove_all(dir);
}

TEST(Pipeline, DatagenCountsAndReproduces) {
  const Dims d{8, 8, 8};
  const fs::path out = fresh_dir("datagen");
  const auto kernels = two_kernels(d);
  const std::vector<DenoiserEntry> dens{gaussian_entry("g", d, 0.01)};
  const auto cfg = small_config(out);
  const auto m = datagen(kernels, dens, cfg);
  ASSERT_EQ(m.entries.size(), 6u);
  std::set<std::string> paths;
  for (const auto& e : m.entries) {
    ASSERT_TRUE(e.ok) << e.error;
    EXPECT_TRUE(paths.insert(e.path).second);
    const Field3 stored = io::read_field(out / e.path);
    const Field3 again = regenerate_entry(e, kernels, dens, cfg);
    Field3 rounded = again;
    for (double& v : rounded.data()) v = static_cast<float>(v);
    EXPECT_EQ(stored.data(), rounded.data());
  }
  const auto reread = DatasetManifest::from_json(io::read_json(out / "manifest.json"));
  EXPECT_EQ(reread.entries.size(), 6u);
  EXPECT_EQ(reread.entries[4].seed, m.entries[4].seed);
  EXPECT_EQ(reread.master_seed, 1234u);

  // A second run is byte-identical, including with several workers.
  const fs::path out2 = fresh_dir("datagen2");
  auto cfg2 = cfg;
  cfg2.out_dir = out2;
  cfg2.threads = 3;
  datagen(kernels, dens, cfg2);
  for (const auto& e : m.entries) {
    EXPECT_EQ(io::read_text(out / e.path), io::read_text(out2 / e.path));
  }
  fs::remove_all(out);
  fs::remove_all(out2);
}

TEST(Pipeline, FullSkipStoresRawGrf) {
  const Dims d{8, 8, 8};
  const fs::path out = fresh_dir("fullskip");
  const auto kernels = two_kernels(d);
  const std::vector<DenoiserEntry> dens{gaussian_entry("g", d, 0.01)};
  auto cfg = small_config(out);
  cfg.replicates = 1;
  cfg.sampler.skip = cfg.sampler.steps;
  cfg.dtype = io::DType::F64;
  const auto m = datagen(kernels, dens, cfg);
  for (const auto& e : m.entries) {
    std::mt19937_64 rng(e.seed);
    const auto& k = e.kernel_id == "k0" ? kernels[0] : kernels[1];
    const Field3 raw = mogrf::Sampler(mogrf::make_spec(k.covrow)).sample(rng);
    EXPECT_EQ(io::read_field(out / e.path).data(), raw.data());
  }
  fs::remove_all(out);
}

TEST(Pipeline, DatagenRecordsFailuresAndContinues) {
  const Dims d{4, 4, 4};
  const fs::path out = fresh_dir("failures");
  auto kernels = two_kernels(d);
  std::fill(kernels[1].covrow.values[0].begin(), kernels[1].covrow.values[0].end(), 0.0);  // degenerate
  const std::vector<DenoiserEntry> dens{gaussian_entry("g", d, 0.01)};
  auto cfg = small_config(out);
  cfg.replicates = 2;
  const auto m = datagen(kernels, dens, cfg);
  ASSERT_EQ(m.entries.size(), 4u);
  int failed = 0;
  for (const auto& e : m.entries) {
    if (!e.ok) {
      ++failed;
      EXPECT_EQ(e.kernel_id, "k1");
      EXPECT_FALSE(e.error.empty());
      EXPECT_FALSE(fs::exists(out / e.path));
    }
  }
  EXPECT_EQ(failed, 2);
  EXPECT_EQ(io::read_json(out / "manifest.json").at("entries")[2].at("status"), "failed");
  fs::remove_all(out);
}

TEST(Pipeline, DatagenValidation) {
  const Dims d{4, 4, 4};
  auto kernels = two_kernels(d);
  kernels[1].id = kernels[0].id;
  const std::vector<DenoiserEntry> dens{gaussian_entry("g", d, 0.01)};
  EXPECT_THROW(datagen(kernels, dens, small_config(fresh_dir("dup"))), ValidationError);
  auto cfg = small_config(fresh_dir("r0"));
  cfg.replicates = 0;
  EXPECT_THROW(datagen(two_kernels(d), dens, cfg), ValidationError);
}

TEST(Pipeline, PcaMatchesEigenOracle) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int l : {7, 50, 120}) {
    Eigen::MatrixXd x(50, l);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng) * (1.0 + static_cast<double>(i % l) / l);
    std::vector<std::vector<double>> rows;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      std::vector<double> r(static_cast<std::size_t>(l));
      for (int j = 0; j < l; ++j) r[static_cast<std::size_t>(j)] = x(i, j);
      rows.push_back(std::move(r));
    }
    const auto pca = pca_diversity(rows);
    const auto oracle = oracle_ratios(x);
    double sum = 0.0;
    for (std::size_t j = 0; j < pca.explained_variance_ratio.size(); ++j) {
      EXPECT_NEAR(pca.explained_variance_ratio[j], oracle[j], 1e-10);
      if (j > 0) {
        EXPECT_LE(pca.explained_variance_ratio[j], pca.explained_variance_ratio[j - 1]);
      }
      EXPECT_GE(pca.explained_variance_ratio[j], 0.0);
      sum += pca.explained_variance_ratio[j];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_EQ(pca.scores.rows(), 50);
    // Scores are the centred data projected on the components.
    const Eigen::MatrixXd centred = x.rowwise() - x.colwise().mean();
    EXPECT_LT((centred * pca.components - pca.scores).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Pipeline, PcaRankTwo) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd origin(20), a(20), b(20);
  for (int j = 0; j < 20; ++j) {
    origin[j] = n(rng);
    a[j] = n(rng);
    b[j] = n(rng);
  }
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 30; ++i) {
    const Eigen::VectorXd v = origin + n(rng) * a + n(rng) * b;
    rows.emplace_back(v.data(), v.data() + v.size());
  }
  const auto pca = pca_diversity(rows);
  EXPECT_NEAR(pca.explained_variance_ratio[0] + pca.explained_variance_ratio[1], 1.0, 1e-12);
  for (std::size_t j = 2; j < pca.explained_variance_ratio.size(); ++j) EXPECT_LT(pca.explained_variance_ratio[j], 1e-20);
}

TEST(Pipeline, PcaDuplicatesAndTruncation) {
  const std::vector<std::vector<double>> dup(4, std::vector<double>{1.0, 2.0, 3.0});
  const auto pca = pca_diversity(dup);
  for (double r : pca.explained_variance_ratio) EXPECT_EQ(r, 0.0);
  EXPECT_FALSE(pca.warnings.empty());

  const std::vector<std::vector<double>> three{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 2, 0}};
  const auto t = pca_diversity(three, 10);
  EXPECT_EQ(t.explained_variance_ratio.size(), 3u);
  ASSERT_EQ(t.warnings.size(), 1u);
  EXPECT_NE(t.warnings[0].find("truncated"), std::string::npos);
  EXPECT_THROW(pca_diversity({{1.0}}), ValidationError);
  EXPECT_THROW(pca_diversity({{1.0, 2.0}, {1.0}}), DimensionError);
}

TEST(Pipeline, StatsVectorSelection) {
  const Field3 f = testutil::random_field(3, {64, 8, 40}, 9);
  const auto sel = default_selection(3, f.dims(), 32);
  EXPECT_EQ(sel.stride[0], 2);
  EXPECT_EQ(sel.stride[1], 1);
  EXPECT_EQ(sel.stride[2], 2);
  const auto v = stats_vector(f, sel);
  EXPECT_EQ(v.values.size(), 3u * 32u * 8u * 20u);
  const auto full = stats::two_point_stats(f, sel.pairs);
  EXPECT_EQ(v.values[1], full.values[0][2]);
  EXPECT_EQ(v.values[32], full.values[0][f.dims().index(0, 1, 0)]);
  EXPECT_EQ(sel.to_json().at("stride")[0], 2);
}

TEST(Pipeline, DenoiserRegistry) {
  const auto names = registered_denoisers();
  EXPECT_NE(std::find(names.begin(), names.end(), "gaussian"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "external"), names.end());
  EXPECT_THROW(make_denoiser({{"type", "nope"}}, {{2, 2, 2}, 1, {}}), ValidationError);
  EXPECT_THROW(make_denoiser({{"type", "gaussian"}}, {{2, 2, 2}, 1, {}}), ValidationError);
  register_denoiser("identity", [](const nlohmann::json&, const DenoiserContext& ctx) {
    return diffusion::edm_precondition([](const Field3& x, double) { return x; }, 0.5, ctx.channels, ctx.dims);
  });
  auto d = make_denoiser({{"type", "identity"}}, {{2, 2, 2}, 1, {}});
  EXPECT_EQ(d->dims(), (Dims{2, 2, 2}));
}

TEST(Pipeline, GaussianDenoiserFromKernel) {
  const auto params = testutil::smooth_params(3, 3.0);
  const nlohmann::json spec{{"type", "gaussian"}, {"kernel", io::to_json(params)}, {"means", {0.1, 0.2, 0.3}}};
  auto d = make_denoiser(spec, {{8, 8, 8}, 3, {}});
  const Field3 x(3, {8, 8, 8}, 0.0);
  const Field3 out = d->denoise(x, 1e6);
  EXPECT_NEAR(out.channel_means()[2], 0.3, 1e-9);
}

TEST(Pipeline, ExternalDenoiserProtocol) {
  const Dims d{4, 3, 2};
  const nlohmann::json spec{{"type", "external"}, {"command", {EXTERNAL_DENOISER_FIXTURE}}};
  auto ext = make_denoiser(spec, {d, 2, {}});
  const auto ref = make_denoiser({{"type", "gaussian"}, {"white_noise_variance", 1.0}}, {d, 2, {}});
  const Field3 x = testutil::random_field(2, d, 1);
  for (double sigma : {0.1, 1.0, 5.0}) {
    const Field3 a = ext->denoise(x, sigma);
    const Field3 b = ref->denoise(x, sigma);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-10);
  }
  // The same process serves a whole sampler run.
  diffusion::SamplerConfig c;
  c.steps = 6;
  std::mt19937_64 r1(3), r2(3);
  const Field3 a = diffusion::sample(nullptr, *ext, c, r1);
  const Field3 b = diffusion::sample(nullptr, *ref, c, r2);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-9);
}

TEST(Pipeline, ExternalDenoiserErrors) {
  const Dims d{2, 2, 2};
  auto failing = make_denoiser({{"type", "external"}, {"command", {EXTERNAL_DENOISER_FIXTURE, "--fail"}}}, {d, 1, {}});
  try {
    failing->denoise(Field3(1, d), 1.0);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("refused"), std::string::npos);
  }
  auto crashing = make_denoiser({{"type", "external"}, {"command", {EXTERNAL_DENOISER_FIXTURE, "--crash"}}}, {d, 1, {}});
  EXPECT_THROW(crashing->denoise(Field3(1, d), 1.0), Error);
  EXPECT_THROW(make_denoiser({{"type", "external"}, {"command", {"/nonexistent/denoiser"}}}, {d, 1, {}}), Error);
  EXPECT_THROW(make_denoiser({{"type", "external"}}, {d, 1, {}}), ValidationError);
}
