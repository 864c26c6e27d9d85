#pragma once

// Denoiser plug-ins by name. "gaussian" builds the exact posterior-mean
// denoiser from a kernel or covariance; "external" talks to a subprocess.
//
// External protocol: the child is started once and kept alive. For each call
// the parent writes the noisy field to a PMF1 file and sends one JSON line on
// the child's stdin:
//   {"input": "<path>", "sigma": <double>, "output": "<path>"}
// The child writes the denoised PMF1 file to "output" and answers with one
// line on stdout: {"status": "ok"} or {"status": "error", "message": "..."}.
// Closing stdin asks the child to exit.

#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "microsynth/diffusion.hpp"

namespace microsynth::pipeline {

class ExternalDenoiser final : public diffusion::Denoiser {
 public:
  /// `workdir` holds the exchange files; a private temp directory when empty.
  ExternalDenoiser(std::vector<std::string> command, int channels, Dims dims, std::filesystem::path workdir = {});
  ~ExternalDenoiser() override;
  ExternalDenoiser(const ExternalDenoiser&) = delete;
  ExternalDenoiser& operator=(const ExternalDenoiser&) = delete;

  Field3 denoise(const Field3& x, double sigma) override;
  int channels() const override { return channels_; }
  Dims dims() const override { return dims_; }
  std::string name() const override { return "external"; }

 private:
  std::vector<std::string> command_;
  int channels_;
  Dims dims_;
  std::filesystem::path workdir_;
  bool owns_workdir_ = false;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string pending_;
  std::mutex mutex_;
  std::uint64_t calls_ = 0;

  std::string read_line();
  void shutdown();
};

struct DenoiserContext {
  Dims dims{};
  int channels = 0;
  /// Relative paths inside a spec resolve against this directory.
  std::filesystem::path base_dir;
};

using DenoiserFactory = std::function<diffusion::DenoiserPtr(const nlohmann::json& spec, const DenoiserContext&)>;

/// Registers or replaces a factory for `type`.
void register_denoiser(const std::string& type, DenoiserFactory factory);
std::vector<std::string> registered_denoisers();

/// spec["type"] selects the factory. Built-ins:
///   {"type": "gaussian", "kernel": <MOSM document or path>, "means": [...]}
///   {"type": "gaussian", "covariance": "<full covariance PMF1 path>", "means": [...]}
///   {"type": "gaussian", "white_noise_variance": v, "means": [...]}
///   {"type": "external", "command": ["prog", "arg", ...], "workdir": "<dir>"}
diffusion::DenoiserPtr make_denoiser(const nlohmann::json& spec, const DenoiserContext& context);

}  // namespace microsynth::pipeline
