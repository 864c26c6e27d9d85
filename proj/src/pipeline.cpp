#include "microsynth/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <Eigen/SVD>

#include "microsynth/errors.hpp"
#include "microsynth/mogrf.hpp"
#include "microsynth/spatial_stats.hpp"

namespace microsynth::pipeline {

namespace fs = std::filesystem;

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_string(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix64(h);
}

std::uint64_t entry_seed(std::uint64_t master, const std::string& kernel_id, const std::string& denoiser_id,
                         int replicate) {
  std::uint64_t h = mix64(master);
  h = mix64(h ^ hash_string("kernel:" + kernel_id));
  h = mix64(h ^ hash_string("denoiser:" + denoiser_id));
  h = mix64(h ^ static_cast<std::uint64_t>(replicate));
  return h;
}

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers pulling indices from a
// shared counter. Exceptions escape from the lowest failing index.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string reason_class(const std::string& reason) {
  const auto colon = reason.find(':');
  return colon == std::string::npos ? reason : reason.substr(0, colon);
}

std::string kernel_id(std::size_t index) {
  std::ostringstream ss;
  ss << 'k' << std::setw(4) << std::setfill('0') << index;
  return ss.str();
}

}  // namespace

void GenKernelsOptions::validate() const {
  bounds.validate();
  dims.validate();
  if (target_count < 1) throw ValidationError("gen_kernels needs target_count >= 1");
  if (channels < 1 || mixtures < 1) throw ValidationError("gen_kernels needs channels, mixtures >= 1");
  if (!(periodicity_tol > 0.0)) throw ValidationError("periodicity tolerance must be positive");
  if (batch_size < 0 || abort_after_batches < 1) throw ValidationError("invalid batch settings");
  if (!(min_acceptance >= 0.0 && min_acceptance <= 1.0)) throw ValidationError("min_acceptance must lie in [0, 1]");
}

GenKernelsResult gen_kernels(const GenKernelsOptions& options, const ProgressFn& progress) {
  options.validate();
  const int batch_size = options.batch_size > 0 ? options.batch_size : std::max(options.target_count, 32);
  GenKernelsResult result;

  for (int batch = 0; static_cast<int>(result.accepted.size()) < options.target_count; ++batch) {
    const std::uint64_t batch_seed = mix64(options.seed ^ mix64(static_cast<std::uint64_t>(batch) + 1));
    auto candidates =
        mosm::sample_params_lhs(options.bounds, batch_size, options.mixtures, options.channels, batch_seed);
    std::vector<KernelRecord> records(candidates.size());
    parallel_for(candidates.size(), options.threads, [&](std::size_t i) {
      KernelRecord& rec = records[i];
      rec.params = std::move(candidates[i]);
      rec.batch = batch;
      try {
        rec.covrow = mosm::kernel_to_grid(rec.params, options.dims);
        rec.verdict = mosm::validate_kernel(rec.covrow, options.periodicity_tol);
        if (rec.verdict.accepted && options.probe) {
          const mogrf::Sampler sampler(mogrf::make_spec(rec.covrow));
          std::mt19937_64 rng(mix64(batch_seed ^ mix64(i + 1)));
          const Field3 probe = sampler.sample(rng);
          rec.verdict = mosm::validate_kernel(rec.covrow, options.periodicity_tol, &probe);
        }
      } catch (const DegenerateError& e) {
        rec.verdict.accepted = false;
        rec.verdict.reason = std::string("degenerate: ") + e.what();
      }
    });

    BatchRecord br;
    br.batch = batch;
    for (auto& rec : records) {
      if (static_cast<int>(result.accepted.size()) >= options.target_count) break;
      ++br.proposed;
      if (rec.verdict.accepted) {
        rec.id = kernel_id(result.accepted.size());
        result.accepted.push_back(std::move(rec));
        ++br.accepted;
      } else {
        ++result.rejection_reasons[reason_class(rec.verdict.reason)];
      }
    }
    br.rejection_fraction = br.proposed > 0 ? 1.0 - static_cast<double>(br.accepted) / br.proposed : 0.0;
    result.proposed += br.proposed;
    result.batches.push_back(br);
    if (progress) {
      progress({{"event", "batch"},
                {"batch", batch},
                {"proposed", br.proposed},
                {"accepted", br.accepted},
                {"rejection_fraction", br.rejection_fraction},
                {"total_accepted", result.accepted.size()},
                {"target", options.target_count}});
    }
    const double rate = static_cast<double>(result.accepted.size()) / result.proposed;
    if (static_cast<int>(result.accepted.size()) < options.target_count && batch + 1 >= options.abort_after_batches &&
        rate < options.min_acceptance) {
      std::ostringstream msg;
      msg << "kernel acceptance rate " << rate << " after " << batch + 1 << " batches (" << result.proposed
          << " proposals) is below " << options.min_acceptance << "; parameter bounds look misconfigured";
      throw ConvergenceError(msg.str());
    }
  }
  return result;
}

void write_kernels(const fs::path& dir, const GenKernelsResult& result, const GenKernelsOptions& options) {
  fs::create_directories(dir);
  nlohmann::json index;
  index["schema"] = "microsynth.kernels/1";
  index["dims"] = {options.dims.x, options.dims.y, options.dims.z};
  index["channels"] = options.channels;
  index["mixtures"] = options.mixtures;
  index["seed"] = options.seed;
  index["periodicity_tol"] = options.periodicity_tol;
  index["probe"] = options.probe;
  index["bounds"] = io::to_json(options.bounds);
  index["proposed"] = result.proposed;
  index["rejection_fraction"] = result.rejection_fraction();
  index["rejection_reasons"] = result.rejection_reasons;
  nlohmann::json batches = nlohmann::json::array();
  for (const auto& b : result.batches) {
    batches.push_back({{"batch", b.batch},
                       {"proposed", b.proposed},
                       {"accepted", b.accepted},
                       {"rejection_fraction", b.rejection_fraction}});
  }
  index["batches"] = batches;
  nlohmann::json kernels = nlohmann::json::array();
  for (const auto& k : result.accepted) {
    const std::string params_file = k.id + ".params.json";
    const std::string cov_file = k.id + ".cov.pmf";
    io::write_json(dir / params_file, io::to_json(k.params));
    io::write_covariance(dir / cov_file, k.covrow);
    kernels.push_back({{"id", k.id},
                       {"params", params_file},
                       {"covariance", cov_file},
                       {"batch", k.batch},
                       {"boundary_ratio", k.verdict.boundary_ratio},
                       {"probe_max_abs", k.verdict.probe_max_abs}});
  }
  index["kernels"] = kernels;
  io::write_json(dir / "kernels.json", index);
}

std::vector<KernelEntry> read_kernels(const fs::path& dir) {
  const auto index = io::read_json(dir / "kernels.json");
  if (index.value("schema", std::string()) != "microsynth.kernels/1") {
    throw FormatError((dir / "kernels.json").string() + " is not a kernel index");
  }
  std::vector<KernelEntry> out;
  try {
    for (const auto& k : index.at("kernels")) {
      KernelEntry e;
      e.id = k.at("id").get<std::string>();
      e.covrow = io::read_covariance(dir / k.at("covariance").get<std::string>());
      if (k.contains("params")) e.params = io::mosm_from_json(io::read_json(dir / k.at("params").get<std::string>()));
      out.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed kernel index: " + std::string(e.what()));
  }
  return out;
}

void DatagenConfig::validate() const {
  if (replicates < 1) throw ValidationError("datagen needs R >= 1");
  sampler.validate(true);
  if (out_dir.empty()) throw ValidationError("datagen needs an output directory");
}

nlohmann::json DatagenConfig::to_json() const {
  return {{"replicates", replicates},
          {"sampler",
           {{"steps", sampler.steps},
            {"sigma_min", sampler.sigma_min},
            {"sigma_max", sampler.sigma_max},
            {"rho", sampler.rho},
            {"s_churn", sampler.s_churn},
            {"s_noise", sampler.s_noise},
            {"s_tmin", sampler.s_tmin},
            {"s_tmax", std::isinf(sampler.s_tmax) ? nlohmann::json("inf") : nlohmann::json(sampler.s_tmax)},
            {"skip", sampler.skip},
            {"sigma_data", sampler.sigma_data}}},
          {"lgd",
           {{"renoise", lgd.renoise}, {"mean_correction", lgd.mean_correction}, {"target_means", lgd.target_means}}},
          {"dtype", dtype == io::DType::F32 ? "f32" : "f64"}};
}

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json doc;
  doc["schema"] = kManifestSchema;
  doc["master_seed"] = master_seed;
  doc["config"] = config;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& e : entries) {
    list.push_back({{"path", e.path},
                    {"kernel_id", e.kernel_id},
                    {"denoiser_id", e.denoiser_id},
                    {"replicate", e.replicate},
                    {"seed", e.seed},
                    {"status", e.ok ? "ok" : "failed"},
                    {"error", e.error},
                    {"clamped_fraction", e.clamped_fraction}});
  }
  doc["entries"] = list;
  return doc;
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& doc) {
  if (doc.value("schema", std::string()) != kManifestSchema) throw FormatError("not a dataset manifest");
  try {
    DatasetManifest m;
    m.master_seed = doc.at("master_seed").get<std::uint64_t>();
    m.config = doc.value("config", nlohmann::json::object());
    for (const auto& j : doc.at("entries")) {
      ManifestEntry e;
      e.path = j.at("path").get<std::string>();
      e.kernel_id = j.at("kernel_id").get<std::string>();
      e.denoiser_id = j.at("denoiser_id").get<std::string>();
      e.replicate = j.at("replicate").get<int>();
      e.seed = j.at("seed").get<std::uint64_t>();
      e.ok = j.at("status").get<std::string>() == "ok";
      e.error = j.value("error", std::string());
      e.clamped_fraction = j.value("clamped_fraction", 0.0);
      m.entries.push_back(std::move(e));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed manifest: " + std::string(e.what()));
  }
}

Field3 generate_entry(const KernelEntry& kernel, diffusion::Denoiser& denoiser, const DatagenConfig& config,
                      std::uint64_t seed, double* clamped_fraction) {
  std::mt19937_64 rng(seed);
  const mogrf::Sampler sampler(mogrf::make_spec(kernel.covrow, kernel.means));
  if (clamped_fraction != nullptr) *clamped_fraction = sampler.clamped_mass_fraction();
  const Field3 x = sampler.sample(rng);
  diffusion::LgdOptions lgd = config.lgd;
  if (lgd.mean_correction && lgd.target_means.empty()) {
    lgd.target_means = kernel.means.empty() ? std::vector<double>(static_cast<std::size_t>(x.channels()), 0.0)
                                            : kernel.means;
  }
  return diffusion::lgd_refine(x, denoiser, config.sampler, rng, lgd);
}

DatasetManifest datagen(const std::vector<KernelEntry>& kernels, const std::vector<DenoiserEntry>& denoisers,
                        const DatagenConfig& config, const ProgressFn& progress) {
  config.validate();
  if (kernels.empty() || denoisers.empty()) throw ValidationError("datagen needs at least one kernel and denoiser");
  std::set<std::string> ids;
  for (const auto& k : kernels) {
    if (!ids.insert("k:" + k.id).second) throw ValidationError("duplicate kernel id " + k.id);
  }
  for (const auto& d : denoisers) {
    if (!ids.insert("d:" + d.id).second) throw ValidationError("duplicate denoiser id " + d.id);
    if (!d.denoiser) throw ValidationError("denoiser " + d.id + " is missing");
  }

  DatasetManifest manifest;
  manifest.master_seed = config.master_seed;
  manifest.config = config.to_json();
  nlohmann::json dlist = nlohmann::json::array();
  for (const auto& d : denoisers) dlist.push_back({{"id", d.id}, {"spec", d.spec}});
  manifest.config["denoisers"] = dlist;
  nlohmann::json klist = nlohmann::json::array();
  for (const auto& k : kernels) klist.push_back(k.id);
  manifest.config["kernels"] = klist;

  struct Job {
    std::size_t kernel;
    std::size_t denoiser;
    int replicate;
  };
  std::vector<Job> jobs;
  for (std::size_t d = 0; d < denoisers.size(); ++d) {
    for (std::size_t k = 0; k < kernels.size(); ++k) {
      for (int r = 0; r < config.replicates; ++r) jobs.push_back({k, d, r});
    }
  }
  manifest.entries.resize(jobs.size());
  fs::create_directories(config.out_dir / "fields");
  std::mutex progress_mutex;
  std::size_t done = 0;

  parallel_for(jobs.size(), config.threads, [&](std::size_t j) {
    const Job& job = jobs[j];
    const auto& kernel = kernels[job.kernel];
    const auto& den = denoisers[job.denoiser];
    ManifestEntry& e = manifest.entries[j];
    e.kernel_id = kernel.id;
    e.denoiser_id = den.id;
    e.replicate = job.replicate;
    e.seed = entry_seed(config.master_seed, kernel.id, den.id, job.replicate);
    e.path = "fields/" + den.id + "_" + kernel.id + "_r" + std::to_string(job.replicate) + ".pmf";
    try {
      const Field3 f = generate_entry(kernel, *den.denoiser, config, e.seed, &e.clamped_fraction);
      io::write_field(config.out_dir / e.path, f, config.dtype);
    } catch (const std::exception& ex) {
      e.ok = false;
      e.error = ex.what();
    }
    if (progress) {
      std::lock_guard lock(progress_mutex);
      ++done;
      progress({{"event", "entry"},
                {"done", done},
                {"total", jobs.size()},
                {"path", e.path},
                {"status", e.ok ? "ok" : "failed"}});
    }
  });

  io::write_json(config.out_dir / "manifest.json", manifest.to_json());
  return manifest;
}

Field3 regenerate_entry(const ManifestEntry& entry, const std::vector<KernelEntry>& kernels,
                        const std::vector<DenoiserEntry>& denoisers, const DatagenConfig& config) {
  const auto k = std::find_if(kernels.begin(), kernels.end(), [&](const auto& x) { return x.id == entry.kernel_id; });
  const auto d =
      std::find_if(denoisers.begin(), denoisers.end(), [&](const auto& x) { return x.id == entry.denoiser_id; });
  if (k == kernels.end()) throw ValidationError("unknown kernel id " + entry.kernel_id);
  if (d == denoisers.end()) throw ValidationError("unknown denoiser id " + entry.denoiser_id);
  return generate_entry(*k, *d->denoiser, config, entry.seed);
}

nlohmann::json StatsSelection::to_json() const {
  nlohmann::json p = nlohmann::json::array();
  for (const auto& q : pairs) p.push_back({q.first, q.second});
  return {{"pairs", p}, {"dims", {dims.x, dims.y, dims.z}}, {"stride", {stride[0], stride[1], stride[2]}}};
}

StatsSelection default_selection(int channels, const Dims& dims, int max_per_axis) {
  dims.validate();
  if (max_per_axis < 1) throw ValidationError("max offsets per axis must be positive");
  StatsSelection sel;
  sel.pairs = select_pairs(channels, PairSelection::ReferenceRow);
  sel.dims = dims;
  const std::int64_t extents[3] = {dims.x, dims.y, dims.z};
  for (int a = 0; a < 3; ++a) sel.stride[a] = (extents[a] + max_per_axis - 1) / max_per_axis;
  return sel;
}

StatsVector stats_vector(const Field3& field, const StatsSelection& selection) {
  if (field.dims() != selection.dims) throw DimensionError("field does not match the statistics selection");
  const StatsMap stats = stats::two_point_stats(field, selection.pairs);
  const Dims& d = field.dims();
  StatsVector out;
  out.selection = selection;
  for (const auto& v : stats.values) {
    for (std::int64_t z = 0; z < d.z; z += selection.stride[2]) {
      for (std::int64_t y = 0; y < d.y; y += selection.stride[1]) {
        for (std::int64_t x = 0; x < d.x; x += selection.stride[0]) out.values.push_back(v[d.index(x, y, z)]);
      }
    }
  }
  return out;
}

StatsVector stats_vector(const Field3& field, int max_per_axis) {
  return stats_vector(field, default_selection(field.channels(), field.dims(), max_per_axis));
}

PcaResult pca_diversity(const std::vector<std::vector<double>>& vectors, int components) {
  if (vectors.size() < 2) throw ValidationError("PCA needs at least two vectors");
  const std::size_t l = vectors[0].size();
  if (l == 0) throw ValidationError("PCA vectors are empty");
  const auto n = static_cast<Eigen::Index>(vectors.size());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(l));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& v = vectors[static_cast<std::size_t>(i)];
    if (v.size() != l) throw DimensionError("PCA vectors differ in length");
    for (std::size_t j = 0; j < l; ++j) {
      if (!std::isfinite(v[j])) throw ValidationError("PCA vectors must be finite");
      x(i, static_cast<Eigen::Index>(j)) = v[j];
    }
  }
  x.rowwise() -= x.colwise().mean();

  PcaResult out;
  const Eigen::Index available = std::min<Eigen::Index>(n, static_cast<Eigen::Index>(l));
  Eigen::Index k = components > 0 ? components : available;
  if (k > available) {
    out.warnings.push_back("requested " + std::to_string(components) + " components but only " +
                           std::to_string(available) + " are available; truncated");
    k = available;
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd s = svd.singularValues();
  const double total = s.squaredNorm();
  if (total == 0.0) out.warnings.push_back("all vectors are identical; every component has zero variance");
  for (Eigen::Index j = 0; j < k; ++j) {
    const double s2 = s[j] * s[j];
    out.explained_variance.push_back(s2 / static_cast<double>(n - 1));
    out.explained_variance_ratio.push_back(total > 0.0 ? s2 / total : 0.0);
  }
  out.scores = svd.matrixU().leftCols(k) * s.head(k).asDiagonal();
  out.components = svd.matrixV().leftCols(k);
  return out;
}

}  // namespace microsynth::pipeline
