#pragma once

// Kernel design of experiments, the LGD data generation loop, dataset
// manifests, and PCA of flattened two-point statistics.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "microsynth/diffusion.hpp"
#include "microsynth/grids.hpp"
#include "microsynth/io.hpp"
#include "microsynth/mosm.hpp"

namespace microsynth::pipeline {

/// Stable 64-bit mix (splitmix64 finalizer).
std::uint64_t mix64(std::uint64_t x);
/// FNV-1a of a string, then mixed.
std::uint64_t hash_string(const std::string& s);
/// Per-entry stream seed from (master, kernel id, denoiser id, replicate).
std::uint64_t entry_seed(std::uint64_t master, const std::string& kernel_id, const std::string& denoiser_id,
                         int replicate);

/// Receives one JSON object per progress event.
using ProgressFn = std::function<void(const nlohmann::json&)>;

struct GenKernelsOptions {
  mosm::ParamBounds bounds{};
  int target_count = 1;
  Dims dims{32, 32, 32};
  int channels = 3;
  int mixtures = 4;
  std::uint64_t seed = 0;
  double periodicity_tol = mosm::kDefaultPeriodicityTol;
  /// Draw one MOGRF sample per candidate and reject values outside [-1, 1].
  bool probe = false;
  /// 0 picks max(target_count, 32).
  int batch_size = 0;
  /// Abort once this many batches have run with acceptance below min_acceptance.
  int abort_after_batches = 10;
  double min_acceptance = 1e-3;
  int threads = 1;

  void validate() const;
};

struct KernelRecord {
  std::string id;
  mosm::MosmParams params;
  CovarianceGrid covrow;
  mosm::KernelVerdict verdict;
  int batch = 0;
};

struct BatchRecord {
  int batch = 0;
  int proposed = 0;
  int accepted = 0;
  double rejection_fraction = 0.0;
};

struct GenKernelsResult {
  std::vector<KernelRecord> accepted;
  std::vector<BatchRecord> batches;
  int proposed = 0;
  std::map<std::string, int> rejection_reasons;  // reason class -> count

  double rejection_fraction() const {
    return proposed > 0 ? 1.0 - static_cast<double>(accepted.size()) / proposed : 0.0;
  }
};

/// Throws ConvergenceError when acceptance stays below min_acceptance.
GenKernelsResult gen_kernels(const GenKernelsOptions& options, const ProgressFn& progress = {});

/// Writes <dir>/kernels.json plus per-kernel parameter and covariance files.
void write_kernels(const std::filesystem::path& dir, const GenKernelsResult& result, const GenKernelsOptions& options);

struct KernelEntry {
  std::string id;
  CovarianceGrid covrow;      // reference row
  std::vector<double> means;  // empty means zero
  std::optional<mosm::MosmParams> params;
};

std::vector<KernelEntry> read_kernels(const std::filesystem::path& dir);

struct DenoiserEntry {
  std::string id;
  diffusion::DenoiserPtr denoiser;
  nlohmann::json spec;  // recorded in the manifest
};

struct DatagenConfig {
  int replicates = 3;
  diffusion::SamplerConfig sampler{};
  diffusion::LgdOptions lgd{};
  std::uint64_t master_seed = 0;
  std::filesystem::path out_dir;
  io::DType dtype = io::DType::F32;
  int threads = 1;

  void validate() const;
  nlohmann::json to_json() const;
};

struct ManifestEntry {
  std::string path;  // relative to the manifest directory
  std::string kernel_id;
  std::string denoiser_id;
  int replicate = 0;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  double clamped_fraction = 0.0;
};

inline constexpr const char* kManifestSchema = "microsynth.manifest/1";

struct DatasetManifest {
  std::uint64_t master_seed = 0;
  nlohmann::json config;
  std::vector<ManifestEntry> entries;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& doc);
};

/// One field of the dataset: MOGRF draw seeded by `seed`, refined by
/// lgd_refine with the same stream. Pure in (kernel, denoiser, config, seed).
Field3 generate_entry(const KernelEntry& kernel, diffusion::Denoiser& denoiser, const DatagenConfig& config,
                      std::uint64_t seed, double* clamped_fraction = nullptr);

/// Denoisers x kernels x replicates. Failures are recorded per entry and the
/// loop continues. Writes <out_dir>/manifest.json.
DatasetManifest datagen(const std::vector<KernelEntry>& kernels, const std::vector<DenoiserEntry>& denoisers,
                        const DatagenConfig& config, const ProgressFn& progress = {});

/// Recomputes the field of a manifest entry from its recorded seed.
Field3 regenerate_entry(const ManifestEntry& entry, const std::vector<KernelEntry>& kernels,
                        const std::vector<DenoiserEntry>& denoisers, const DatagenConfig& config);

/// Offsets kept along each axis: every stride-th lattice offset.
struct StatsSelection {
  std::vector<ChannelPair> pairs;
  Dims dims{};
  std::int64_t stride[3] = {1, 1, 1};

  nlohmann::json to_json() const;
};

struct StatsVector {
  StatsSelection selection;
  std::vector<double> values;
};

/// Reference-row statistics decimated by stride ceil(D / max_per_axis).
StatsSelection default_selection(int channels, const Dims& dims, int max_per_axis = 32);
StatsVector stats_vector(const Field3& field, const StatsSelection& selection);
StatsVector stats_vector(const Field3& field, int max_per_axis = 32);

struct PcaResult {
  std::vector<double> explained_variance_ratio;  // non-increasing
  std::vector<double> explained_variance;        // sample variance per component
  Eigen::MatrixXd scores;                        // items x components
  Eigen::MatrixXd components;                    // L x components
  std::vector<std::string> warnings;
};

/// Mean-centres the rows and takes their SVD. `components` <= 0 keeps all.
PcaResult pca_diversity(const std::vector<std::vector<double>>& vectors, int components = 0);

}  // namespace microsynth::pipeline
