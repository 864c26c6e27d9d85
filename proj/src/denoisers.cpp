#include "microsynth/denoisers.hpp"

#include <atomic>
#include <cerrno>
#include <cstring>
#include <map>

#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include "microsynth/errors.hpp"
#include "microsynth/io.hpp"
#include "microsynth/mosm.hpp"

extern char** environ;

namespace microsynth::pipeline {

namespace fs = std::filesystem;

ExternalDenoiser::ExternalDenoiser(std::vector<std::string> command, int channels, Dims dims, fs::path workdir)
    : command_(std::move(command)), channels_(channels), dims_(dims), workdir_(std::move(workdir)) {
  if (command_.empty()) throw ValidationError("external denoiser needs a command");
  if (channels < 1) throw ValidationError("external denoiser needs a channel count");
  dims_.validate();
  if (workdir_.empty()) {
    static std::atomic<int> counter{0};
    workdir_ = fs::temp_directory_path() /
               ("microsynth-ext-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    owns_workdir_ = true;
  }
  fs::create_directories(workdir_);

  int sv[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0) {
    throw Error(std::string("socketpair failed: ") + std::strerror(errno));
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, sv[1], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, sv[1], STDOUT_FILENO);
  std::vector<char*> argv;
  for (auto& a : command_) argv.push_back(a.data());
  argv.push_back(nullptr);
  pid_t pid = -1;
  const int rc = ::posix_spawnp(&pid, argv[0], &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(sv[1]);
  if (rc != 0) {
    ::close(sv[0]);
    throw Error("cannot start external denoiser '" + command_[0] + "': " + std::strerror(rc));
  }
  pid_ = pid;
  to_child_ = sv[0];
  from_child_ = sv[0];
}

ExternalDenoiser::~ExternalDenoiser() {
  shutdown();
  if (owns_workdir_) {
    std::error_code ec;
    fs::remove_all(workdir_, ec);
  }
}

void ExternalDenoiser::shutdown() {
  if (to_child_ >= 0) {
    ::shutdown(to_child_, SHUT_WR);
    ::close(to_child_);
    to_child_ = from_child_ = -1;
  }
  if (pid_ > 0) {
    int status = 0;
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
  }
}

std::string ExternalDenoiser::read_line() {
  for (;;) {
    const auto nl = pending_.find('\n');
    if (nl != std::string::npos) {
      std::string line = pending_.substr(0, nl);
      pending_.erase(0, nl + 1);
      return line;
    }
    char buf[4096];
    const ssize_t n = ::recv(from_child_, buf, sizeof(buf), 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw Error("external denoiser closed its output");
    pending_.append(buf, static_cast<std::size_t>(n));
  }
}

Field3 ExternalDenoiser::denoise(const Field3& x, double sigma) {
  if (x.channels() != channels_ || x.dims() != dims_) {
    throw DimensionError("external denoiser: field does not match the declared shape");
  }
  std::lock_guard lock(mutex_);
  if (to_child_ < 0) throw Error("external denoiser is not running");
  const std::uint64_t call = calls_++;
  const fs::path in = workdir_ / ("in-" + std::to_string(call) + ".pmf");
  const fs::path out = workdir_ / ("out-" + std::to_string(call) + ".pmf");
  io::write_field(in, x, io::DType::F64);
  const std::string request =
      nlohmann::json{{"input", in.string()}, {"sigma", sigma}, {"output", out.string()}}.dump() + "\n";
  std::size_t sent = 0;
  while (sent < request.size()) {
    const ssize_t n = ::send(to_child_, request.data() + sent, request.size() - sent, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw Error("external denoiser is not accepting requests");
    sent += static_cast<std::size_t>(n);
  }
  nlohmann::json reply;
  const std::string line = read_line();
  try {
    reply = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw Error("external denoiser sent a malformed reply: " + line);
  }
  if (reply.value("status", std::string()) != "ok") {
    throw Error("external denoiser failed: " + reply.value("message", line));
  }
  Field3 result = io::read_field(out);
  std::error_code ec;
  fs::remove(in, ec);
  fs::remove(out, ec);
  if (result.channels() != channels_ || result.dims() != dims_) {
    throw DimensionError("external denoiser returned a field of the wrong shape");
  }
  return result;
}

namespace {

CovarianceGrid white_noise_cov(const DenoiserContext& ctx, double variance) {
  CovarianceGrid cov;
  cov.dims = ctx.dims;
  cov.channels = ctx.channels;
  cov.pairs = select_pairs(ctx.channels, PairSelection::Full);
  for (const auto& p : cov.pairs) {
    std::vector<double> v(ctx.dims.voxels(), 0.0);
    if (p.first == p.second) v[0] = variance;
    cov.values.push_back(std::move(v));
  }
  return cov;
}

fs::path resolve(const DenoiserContext& ctx, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || ctx.base_dir.empty() ? path : ctx.base_dir / path;
}

diffusion::DenoiserPtr make_gaussian(const nlohmann::json& spec, const DenoiserContext& ctx) {
  std::vector<double> means = spec.value("means", std::vector<double>{});
  if (spec.contains("kernel")) {
    const auto& k = spec.at("kernel");
    const mosm::MosmParams params =
        k.is_string() ? io::mosm_from_json(io::read_json(resolve(ctx, k.get<std::string>()))) : io::mosm_from_json(k);
    if (params.channels != ctx.channels) throw ValidationError("gaussian denoiser kernel has the wrong channel count");
    return diffusion::gaussian_denoiser(mosm::kernel_to_full_grid(params, ctx.dims), std::move(means));
  }
  if (spec.contains("covariance")) {
    CovarianceGrid cov = io::read_covariance(resolve(ctx, spec.at("covariance").get<std::string>()));
    if (cov.dims != ctx.dims || cov.channels != ctx.channels) {
      throw ValidationError("gaussian denoiser covariance does not match the sampling grid");
    }
    return diffusion::gaussian_denoiser(cov, std::move(means));
  }
  if (spec.contains("white_noise_variance")) {
    return diffusion::gaussian_denoiser(white_noise_cov(ctx, spec.at("white_noise_variance").get<double>()),
                                        std::move(means));
  }
  throw ValidationError("gaussian denoiser spec needs 'kernel', 'covariance' or 'white_noise_variance'");
}

diffusion::DenoiserPtr make_external(const nlohmann::json& spec, const DenoiserContext& ctx) {
  if (!spec.contains("command") || !spec.at("command").is_array() || spec.at("command").empty()) {
    throw ValidationError("external denoiser spec needs a non-empty 'command' array");
  }
  auto command = spec.at("command").get<std::vector<std::string>>();
  fs::path workdir;
  if (spec.contains("workdir")) workdir = resolve(ctx, spec.at("workdir").get<std::string>());
  return std::make_shared<ExternalDenoiser>(std::move(command), ctx.channels, ctx.dims, workdir);
}

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

std::map<std::string, DenoiserFactory>& registry() {
  static std::map<std::string, DenoiserFactory> r{{"gaussian", make_gaussian}, {"external", make_external}};
  return r;
}

}  // namespace

void register_denoiser(const std::string& type, DenoiserFactory factory) {
  std::lock_guard lock(registry_mutex());
  registry()[type] = std::move(factory);
}

std::vector<std::string> registered_denoisers() {
  std::lock_guard lock(registry_mutex());
  std::vector<std::string> names;
  for (const auto& [k, v] : registry()) names.push_back(k);
  return names;
}

diffusion::DenoiserPtr make_denoiser(const nlohmann::json& spec, const DenoiserContext& context) {
  if (!spec.is_object() || !spec.contains("type")) throw ValidationError("denoiser spec needs a 'type'");
  const std::string type = spec.at("type").get<std::string>();
  DenoiserFactory factory;
  {
    std::lock_guard lock(registry_mutex());
    const auto it = registry().find(type);
    if (it == registry().end()) throw ValidationError("unknown denoiser type '" + type + "'");
    factory = it->second;
  }
  try {
    return factory(spec, context);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("denoiser spec: " + std::string(e.what()));
  }
}

}  // namespace microsynth::pipeline
