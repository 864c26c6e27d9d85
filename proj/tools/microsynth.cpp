#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "microsynth/cases.hpp"
#include "microsynth/denoisers.hpp"
#include "microsynth/errors.hpp"
#include "microsynth/io.hpp"
#include "microsynth/mogrf.hpp"
#include "microsynth/mosm.hpp"
#include "microsynth/pipeline.hpp"
#include "microsynth/spatial_stats.hpp"

using namespace microsynth;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitConvergence = 4;

struct Global {
  bool progress = false;
  bool dry_run = false;
  int threads = 1;
};

Global g_opts;

void emit(const json& event) {
  if (g_opts.progress) {
    std::cerr << event.dump() << '\n';
    return;
  }
  std::string line = event.value("event", "");
  for (const auto& [k, v] : event.items()) {
    if (k != "event") line += " " + k + "=" + v.dump();
  }
  std::cerr << line << '\n';
}

void print_report(const json& report) { std::cout << report.dump(2) << std::endl; }

bool dry_run(const std::string& command, const json& plan) {
  if (!g_opts.dry_run) return false;
  print_report({{"command", command}, {"dry_run", true}, {"plan", plan}});
  return true;
}

Dims to_dims(const std::vector<std::int64_t>& v) {
  if (v.size() != 3) throw ValidationError("dims needs three extents");
  Dims d{v[0], v[1], v[2]};
  d.validate();
  return d;
}

json dims_json(const Dims& d) { return json::array({d.x, d.y, d.z}); }

io::DType parse_dtype(const std::string& s) {
  if (s == "f32") return io::DType::F32;
  if (s == "f64") return io::DType::F64;
  throw ValidationError("dtype must be f32 or f64, got '" + s + "'");
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw ValidationError(what + " '" + p.string() + "' does not exist");
}

/// Reads a denoiser spec file; relative paths inside resolve against its directory.
diffusion::DenoiserPtr load_denoiser(const fs::path& spec_path, int channels, const Dims& dims, json* spec_out = nullptr) {
  require_file(spec_path, "denoiser spec");
  const json spec = io::read_json(spec_path);
  pipeline::DenoiserContext ctx;
  ctx.channels = channels;
  ctx.dims = dims;
  ctx.base_dir = spec_path.parent_path();
  if (spec_out) *spec_out = spec;
  return pipeline::make_denoiser(spec, ctx);
}

struct SamplerFlags {
  int steps = 32;
  double churn = 0.0;
  double s_tmin = 0.0;
  double s_tmax = std::numeric_limits<double>::infinity();
  double s_noise = 1.0;
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double rho = 7.0;
  double sigma_data = 0.5;

  void add(CLI::App* app) {
    app->add_option("--steps", steps, "Diffusion steps N")->capture_default_str();
    app->add_option("--churn", churn, "S_churn")->capture_default_str();
    app->add_option("--s-tmin", s_tmin, "Lower noise level of the churn window")->capture_default_str();
    app->add_option("--s-tmax", s_tmax, "Upper noise level of the churn window");
    app->add_option("--s-noise", s_noise, "Churn noise scale")->capture_default_str();
    app->add_option("--sigma-min", sigma_min)->capture_default_str();
    app->add_option("--sigma-max", sigma_max)->capture_default_str();
    app->add_option("--rho", rho)->capture_default_str();
    app->add_option("--sigma-data", sigma_data)->capture_default_str();
  }

  diffusion::SamplerConfig config(int skip = 0) const {
    diffusion::SamplerConfig c;
    c.steps = steps;
    c.s_churn = churn;
    c.s_tmin = s_tmin;
    c.s_tmax = s_tmax;
    c.s_noise = s_noise;
    c.sigma_min = sigma_min;
    c.sigma_max = sigma_max;
    c.rho = rho;
    c.sigma_data = sigma_data;
    c.skip = skip;
    return c;
  }
};

json sampler_json(const diffusion::SamplerConfig& c) {
  return {{"steps", c.steps}, {"skip", c.skip},         {"s_churn", c.s_churn},       {"s_noise", c.s_noise},
          {"s_tmin", c.s_tmin}, {"s_tmax", std::isfinite(c.s_tmax) ? json(c.s_tmax) : json("inf")},
          {"sigma_min", c.sigma_min}, {"sigma_max", c.sigma_max}, {"rho", c.rho},  {"sigma_data", c.sigma_data}};
}

const std::map<std::string, Axis> kAxisMap{{"x", Axis::X}, {"y", Axis::Y}, {"z", Axis::Z}};

// ---------------------------------------------------------------- gen-kernels

struct GenKernelsCmd {
  int count = 1;
  std::vector<std::int64_t> dims{32, 32, 32};
  int channels = 3;
  int mixtures = 4;
  std::uint64_t seed = 0;
  std::string bounds_file;
  std::string out;
  bool probe = false;
  double periodicity_tol = mosm::kDefaultPeriodicityTol;
  int batch_size = 0;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("gen-kernels", "Sample MOSM kernels by LHS with rejection");
    c->add_option("--count", count, "Accepted kernels to produce")->capture_default_str();
    c->add_option("--dims", dims, "Grid extents x y z")->expected(3)->capture_default_str();
    c->add_option("--channels", channels)->capture_default_str();
    c->add_option("--mixtures", mixtures)->capture_default_str();
    c->add_option("--seed", seed)->capture_default_str();
    c->add_option("--bounds", bounds_file, "JSON file with parameter bounds")->check(CLI::ExistingFile);
    c->add_option("--out", out, "Output directory")->required();
    c->add_flag("--probe", probe, "Also reject kernels whose probe sample leaves [-1, 1]");
    c->add_option("--periodicity-tol", periodicity_tol)->capture_default_str();
    c->add_option("--batch-size", batch_size, "LHS batch size (0 = automatic)")->capture_default_str();
    c->callback([this] { run(); });
  }

  void run() {
    pipeline::GenKernelsOptions opt;
    if (!bounds_file.empty()) opt.bounds = io::bounds_from_json(io::read_json(bounds_file));
    opt.target_count = count;
    opt.dims = to_dims(dims);
    opt.channels = channels;
    opt.mixtures = mixtures;
    opt.seed = seed;
    opt.probe = probe;
    opt.periodicity_tol = periodicity_tol;
    opt.batch_size = batch_size;
    opt.threads = g_opts.threads;
    opt.validate();
    if (dry_run("gen-kernels", {{"count", count},
                                {"dims", dims_json(opt.dims)},
                                {"channels", channels},
                                {"mixtures", mixtures},
                                {"bounds", io::to_json(opt.bounds)},
                                {"probe", probe},
                                {"out", out}})) {
      return;
    }
    const auto result = pipeline::gen_kernels(opt, emit);
    pipeline::write_kernels(out, result, opt);
    json reasons = result.rejection_reasons;
    print_report({{"command", "gen-kernels"},
                  {"accepted", result.accepted.size()},
                  {"proposed", result.proposed},
                  {"rejection_fraction", result.rejection_fraction()},
                  {"rejection_reasons", reasons},
                  {"out", out}});
  }
};

// ---------------------------------------------------------------- sample-grf

struct SampleGrfCmd {
  std::string kernels_dir;
  std::string kernel_id;
  std::string params_file;
  std::vector<std::int64_t> dims;
  std::uint64_t seed = 0;
  int count = 1;
  std::string out;
  std::string dtype = "f32";

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("sample-grf", "Draw MOGRF samples from a kernel");
    auto* kd = c->add_option("--kernels", kernels_dir, "Kernel directory written by gen-kernels");
    c->add_option("--id", kernel_id, "Kernel id inside --kernels (default: first)")->needs(kd);
    auto* pf = c->add_option("--params", params_file, "MOSM parameter JSON file")->check(CLI::ExistingFile);
    pf->excludes(kd);
    c->add_option("--dims", dims, "Grid extents x y z (required with --params)")->expected(3);
    c->add_option("--seed", seed)->capture_default_str();
    c->add_option("--count", count)->capture_default_str();
    c->add_option("--out", out, "Output PMF1 file; with --count > 1 an index is appended")->required();
    c->add_option("--dtype", dtype)->check(CLI::IsMember({"f32", "f64"}))->capture_default_str();
    c->callback([this] { run(); });
  }

  std::vector<fs::path> outputs() const {
    if (count == 1) return {out};
    std::vector<fs::path> paths;
    const fs::path base(out);
    for (int i = 0; i < count; ++i) {
      paths.push_back(base.parent_path() /
                      (base.stem().string() + "_" + std::to_string(i) + base.extension().string()));
    }
    return paths;
  }

  void run() {
    if (count < 1) throw ValidationError("--count must be >= 1");
    CovarianceGrid covrow;
    std::vector<double> means;
    std::string source;
    if (!params_file.empty()) {
      if (dims.empty()) throw ValidationError("--params needs --dims");
      const auto params = io::mosm_from_json(io::read_json(params_file));
      params.validate();
      covrow = mosm::kernel_to_grid(params, to_dims(dims));
      source = params_file;
    } else if (!kernels_dir.empty()) {
      const auto entries = pipeline::read_kernels(kernels_dir);
      if (entries.empty()) throw ValidationError("no kernels in " + kernels_dir);
      const pipeline::KernelEntry* hit = &entries.front();
      if (!kernel_id.empty()) {
        hit = nullptr;
        for (const auto& e : entries) {
          if (e.id == kernel_id) hit = &e;
        }
        if (!hit) throw ValidationError("kernel '" + kernel_id + "' not found in " + kernels_dir);
      }
      covrow = hit->covrow;
      means = hit->means;
      source = kernels_dir + "#" + hit->id;
    } else {
      throw ValidationError("sample-grf needs --kernels or --params");
    }
    const auto type = parse_dtype(dtype);
    const auto spec = mogrf::make_spec(std::move(covrow), std::move(means));
    spec.validate();
    const auto paths = outputs();
    json files = json::array();
    for (const auto& p : paths) files.push_back(p.string());
    if (dry_run("sample-grf", {{"kernel", source},
                               {"dims", dims_json(spec.dims())},
                               {"channels", spec.channels()},
                               {"seed", seed},
                               {"outputs", files}})) {
      return;
    }
    const mogrf::Sampler sampler(spec);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < paths.size(); ++i) {
      io::write_field(paths[i], sampler.sample(rng), type);
      emit({{"event", "sample"}, {"index", i}, {"path", paths[i].string()}});
    }
    print_report({{"command", "sample-grf"},
                  {"outputs", files},
                  {"clamped_mass_fraction", sampler.clamped_mass_fraction()}});
  }
};

// ---------------------------------------------------------------- datagen

struct DatagenCmd {
  std::string kernels_dir;
  std::vector<std::string> denoiser_specs;
  int replicates = 3;
  int skip = 12;
  SamplerFlags sampler;
  std::uint64_t seed = 0;
  std::string out;
  std::string dtype = "f32";
  bool no_renoise = false;
  bool mean_correction = false;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("datagen", "MOGRF samples refined by a truncated diffusion run");
    c->add_option("--kernels", kernels_dir, "Kernel directory written by gen-kernels")->required();
    c->add_option("--denoiser", denoiser_specs, "Denoiser spec JSON file (repeatable; needs an \"id\")")
        ->required()
        ->check(CLI::ExistingFile);
    c->add_option("--replicates", replicates)->capture_default_str();
    c->add_option("--skip", skip, "Step at which the MOGRF sample enters")->capture_default_str();
    sampler.add(c);
    c->add_option("--seed", seed, "Master seed")->capture_default_str();
    c->add_option("--out", out, "Output directory")->required();
    c->add_option("--dtype", dtype)->check(CLI::IsMember({"f32", "f64"}))->capture_default_str();
    c->add_flag("--no-renoise", no_renoise, "Start refinement from the raw MOGRF sample");
    c->add_flag("--mean-correction", mean_correction, "Re-centre channel means to the kernel means each step");
    c->callback([this] { run(); });
  }

  void run() {
    const auto kernels = pipeline::read_kernels(kernels_dir);
    if (kernels.empty()) throw ValidationError("no kernels in " + kernels_dir);
    const Dims dims = kernels.front().covrow.dims;
    const int channels = kernels.front().covrow.channels;
    for (const auto& k : kernels) {
      if (k.covrow.dims != dims || k.covrow.channels != channels) {
        throw ValidationError("kernels in " + kernels_dir + " do not share one grid");
      }
    }
    std::vector<pipeline::DenoiserEntry> denoisers;
    for (const auto& path : denoiser_specs) {
      json spec;
      auto d = load_denoiser(path, channels, dims, &spec);
      std::string id = spec.value("id", fs::path(path).stem().string());
      denoisers.push_back({id, std::move(d), spec});
    }
    pipeline::DatagenConfig cfg;
    cfg.replicates = replicates;
    cfg.sampler = sampler.config(skip);
    cfg.lgd.renoise = !no_renoise;
    cfg.lgd.mean_correction = mean_correction;
    if (mean_correction) cfg.lgd.target_means.assign(static_cast<std::size_t>(channels), 0.0);
    cfg.master_seed = seed;
    cfg.out_dir = out;
    cfg.dtype = parse_dtype(dtype);
    cfg.threads = g_opts.threads;
    cfg.validate();
    if (dry_run("datagen", {{"kernels", kernels.size()},
                            {"denoisers", denoisers.size()},
                            {"replicates", replicates},
                            {"entries", kernels.size() * denoisers.size() * static_cast<std::size_t>(replicates)},
                            {"config", cfg.to_json()}})) {
      return;
    }
    const auto manifest = pipeline::datagen(kernels, denoisers, cfg, emit);
    int failed = 0;
    for (const auto& e : manifest.entries) failed += e.ok ? 0 : 1;
    print_report({{"command", "datagen"},
                  {"entries", manifest.entries.size()},
                  {"failed", failed},
                  {"manifest", (fs::path(out) / "manifest.json").string()}});
    if (failed > 0) throw Error(std::to_string(failed) + " entries failed; see the manifest");
  }
};

// ---------------------------------------------------------------- stats

struct StatsCmd {
  std::string input;
  std::string out;
  std::string pairs = "full";
  std::string vector_out;
  int max_per_axis = 32;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("stats", "Two-point statistics of a field");
    c->add_option("--input", input, "PMF1 field")->required()->check(CLI::ExistingFile);
    c->add_option("--out", out, "Statistics file (PMF1 stats)");
    c->add_option("--pairs", pairs)->check(CLI::IsMember({"full", "reference"}))->capture_default_str();
    c->add_option("--vector", vector_out, "Also write the flattened statistics vector (JSON) for pca");
    c->add_option("--max-per-axis", max_per_axis, "Offsets kept per axis in the vector")->capture_default_str();
    c->callback([this] { run(); });
  }

  void run() {
    if (out.empty() && vector_out.empty()) throw ValidationError("stats needs --out and/or --vector");
    if (max_per_axis < 1) throw ValidationError("--max-per-axis must be >= 1");
    if (dry_run("stats", {{"input", input}, {"out", out}, {"pairs", pairs}, {"vector", vector_out}})) return;
    const Field3 f = io::read_field(input);
    json report{{"command", "stats"}, {"input", input}, {"channels", f.channels()}, {"dims", dims_json(f.dims())}};
    if (!out.empty()) {
      const auto sel = pairs == "full" ? PairSelection::Full : PairSelection::ReferenceRow;
      io::write_stats(out, stats::two_point_stats(f, sel));
      report["out"] = out;
    }
    if (!vector_out.empty()) {
      const auto v = pipeline::stats_vector(f, max_per_axis);
      io::write_json(vector_out,
                     {{"schema", "microsynth.statsvector/1"}, {"selection", v.selection.to_json()}, {"values", v.values}});
      report["vector"] = vector_out;
      report["length"] = v.values.size();
    }
    print_report(report);
  }
};

// ---------------------------------------------------------------- pca

struct PcaCmd {
  std::vector<std::string> vectors;
  std::string manifest;
  int components = 0;
  int max_per_axis = 32;
  std::string out;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("pca", "Explained variance of flattened two-point statistics");
    auto* v = c->add_option("--vectors", vectors, "Statistics vector JSON files from 'stats --vector'")
                  ->check(CLI::ExistingFile);
    c->add_option("--manifest", manifest, "Dataset manifest; statistics are computed from its fields")
        ->check(CLI::ExistingFile)
        ->excludes(v);
    c->add_option("--components", components, "Components kept (0 = all)")->capture_default_str();
    c->add_option("--max-per-axis", max_per_axis)->capture_default_str();
    c->add_option("--out", out, "Write the report JSON here as well");
    c->callback([this] { run(); });
  }

  void run() {
    if (vectors.empty() && manifest.empty()) throw ValidationError("pca needs --vectors or --manifest");
    std::vector<fs::path> fields;
    if (!manifest.empty()) {
      const auto m = pipeline::DatasetManifest::from_json(io::read_json(manifest));
      for (const auto& e : m.entries) {
        if (e.ok) fields.push_back(fs::path(manifest).parent_path() / e.path);
      }
    }
    const std::size_t items = vectors.empty() ? fields.size() : vectors.size();
    if (items < 2) throw ValidationError("pca needs at least 2 items, got " + std::to_string(items));
    if (dry_run("pca", {{"items", items}, {"components", components}})) return;
    std::vector<std::vector<double>> rows;
    for (const auto& p : vectors) {
      const json doc = io::read_json(p);
      if (doc.value("schema", "") != "microsynth.statsvector/1") throw FormatError(p + " is not a statistics vector");
      rows.push_back(doc.at("values").get<std::vector<double>>());
    }
    for (const auto& p : fields) rows.push_back(pipeline::stats_vector(io::read_field(p), max_per_axis).values);
    const auto r = pipeline::pca_diversity(rows, components);
    std::vector<std::vector<double>> scores;
    for (Eigen::Index i = 0; i < r.scores.rows(); ++i) {
      scores.emplace_back(static_cast<std::size_t>(r.scores.cols()));
      for (Eigen::Index j = 0; j < r.scores.cols(); ++j) scores.back()[static_cast<std::size_t>(j)] = r.scores(i, j);
    }
    const json report{{"command", "pca"},
                      {"items", rows.size()},
                      {"length", rows.front().size()},
                      {"explained_variance_ratio", r.explained_variance_ratio},
                      {"explained_variance", r.explained_variance},
                      {"scores", scores},
                      {"warnings", r.warnings}};
    if (!out.empty()) io::write_json(out, report);
    print_report(report);
  }
};

// ---------------------------------------------------------------- superres

struct SuperresCmd {
  std::string input;
  std::string axis = "z";
  int factor = 4;
  double fraction = 0.75;
  std::string denoiser;
  SamplerFlags sampler;
  int samples = 1;
  std::uint64_t seed = 0;
  std::string reference;
  std::string out;
  std::string dtype = "f32";

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("superres", "Fill missing sections by inpainting");
    c->add_option("--input", input, "Low-resolution PMF1 field")->required()->check(CLI::ExistingFile);
    c->add_option("--axis", axis)->check(CLI::IsMember({"x", "y", "z"}))->capture_default_str();
    c->add_option("--factor", factor)->capture_default_str();
    c->add_option("--fraction", fraction, "Share of steps that enforce the known voxels")->capture_default_str();
    c->add_option("--denoiser", denoiser, "Denoiser spec JSON file")->required()->check(CLI::ExistingFile);
    sampler.add(c);
    c->add_option("--samples", samples)->capture_default_str();
    c->add_option("--seed", seed)->capture_default_str();
    c->add_option("--reference", reference, "Full-resolution PMF1 field for MAPE")->check(CLI::ExistingFile);
    c->add_option("--out", out, "Output directory")->required();
    c->add_option("--dtype", dtype)->check(CLI::IsMember({"f32", "f64"}))->capture_default_str();
    c->callback([this] { run(); });
  }

  void run() {
    const Field3 low = io::read_field(input);
    cases::SuperresOptions opt;
    opt.axis = kAxisMap.at(axis);
    opt.factor = factor;
    opt.fraction = fraction;
    opt.sampler = sampler.config();
    opt.samples = samples;
    opt.seed = seed;
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw ValidationError("--fraction must lie in [0, 1]");
    if (samples < 1) throw ValidationError("--samples must be >= 1");
    opt.sampler.validate();
    const auto mask = cases::superres_mask(low, opt.axis, factor);
    std::optional<Field3> ref;
    if (!reference.empty()) {
      ref = io::read_field(reference);
      if (ref->dims() != mask.dims() || ref->channels() != mask.channels()) {
        throw DimensionError("reference " + to_string(ref->dims()) + " does not match the upsampled grid " +
                             to_string(mask.dims()));
      }
    }
    auto den = load_denoiser(denoiser, low.channels(), mask.dims());
    const auto type = parse_dtype(dtype);
    if (dry_run("superres", {{"input_dims", dims_json(low.dims())},
                             {"output_dims", dims_json(mask.dims())},
                             {"known_voxels", mask.known_count()},
                             {"samples", samples},
                             {"sampler", sampler_json(opt.sampler)},
                             {"out", out}})) {
      return;
    }
    emit({{"event", "start"}, {"command", "superres"}, {"samples", samples}});
    const auto r = cases::superres(low, *den, opt, ref ? &*ref : nullptr);
    fs::create_directories(out);
    json files = json::array();
    for (std::size_t i = 0; i < r.samples.size(); ++i) {
      const fs::path p = fs::path(out) / ("sample_" + std::to_string(i) + ".pmf");
      io::write_field(p, r.samples[i], type);
      files.push_back(p.string());
    }
    io::write_field(fs::path(out) / "mean.pmf", r.mean, type);
    io::write_field(fs::path(out) / "variance.pmf", r.variance, type);
    json report{{"command", "superres"}, {"samples", files}, {"mean", (fs::path(out) / "mean.pmf").string()},
                {"variance", (fs::path(out) / "variance.pmf").string()}};
    if (r.mape_of_mean) {
      report["mape_of_mean_percent"] = *r.mape_of_mean;
      report["mape_per_sample_percent"] = r.mape_per_sample;
    }
    io::write_json(fs::path(out) / "report.json", report);
    print_report(report);
  }
};

// ---------------------------------------------------------------- expand

struct ExpandCmd {
  std::vector<std::string> images;
  std::string target_volume;
  std::string denoiser;
  SamplerFlags sampler;
  double lr = 1e-2;
  double lr_growth = 2.0;
  double threshold_slope = 1e-5;
  double threshold_final = 1e-7;
  int max_iters = 5000;
  std::string norm = "sum";
  int samples = 1;
  std::uint64_t seed = 0;
  std::string out;
  std::string dtype = "f32";

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("expand", "3D volumes matching the statistics of three orthogonal sections");
    auto* im = c->add_option("--image", images, "AXIS:PATH of a 2D section whose normal is AXIS (give x, y and z)")
                   ->expected(3);
    c->add_option("--target-volume", target_volume, "PMF1 volume whose orthogonal-plane statistics are the target")
        ->check(CLI::ExistingFile)
        ->excludes(im);
    c->add_option("--denoiser", denoiser, "Denoiser spec JSON file")->required()->check(CLI::ExistingFile);
    sampler.add(c);
    c->add_option("--lr", lr, "Initial gradient step")->capture_default_str();
    c->add_option("--lr-growth", lr_growth, "Step multiplier after an accepted iteration")->capture_default_str();
    c->add_option("--threshold-slope", threshold_slope)->capture_default_str();
    c->add_option("--threshold-final", threshold_final)->capture_default_str();
    c->add_option("--max-iters", max_iters, "Iteration cap per diffusion step")->capture_default_str();
    c->add_option("--norm", norm, "Loss normalization")->check(CLI::IsMember({"sum", "mean"}))->capture_default_str();
    c->add_option("--samples", samples)->capture_default_str();
    c->add_option("--seed", seed)->capture_default_str();
    c->add_option("--out", out, "Output directory")->required();
    c->add_option("--dtype", dtype)->check(CLI::IsMember({"f32", "f64"}))->capture_default_str();
    c->callback([this] { run(); });
  }

  stats::OrthoStats load_target() const {
    if (!target_volume.empty()) return stats::ortho_stats(io::read_field(target_volume));
    if (images.size() != 3) throw ValidationError("expand needs three --image sections or --target-volume");
    std::vector<stats::AxisImage> sections;
    std::vector<bool> seen(3, false);
    for (const auto& spec : images) {
      const auto colon = spec.find(':');
      if (colon == std::string::npos || !kAxisMap.count(spec.substr(0, colon))) {
        throw ValidationError("--image expects AXIS:PATH with AXIS in x, y, z; got '" + spec + "'");
      }
      const Axis a = kAxisMap.at(spec.substr(0, colon));
      if (seen[static_cast<int>(a)]) throw ValidationError("--image declares axis " + to_string(a) + " twice");
      seen[static_cast<int>(a)] = true;
      const std::string path = spec.substr(colon + 1);
      require_file(path, "section image");
      sections.push_back({a, io::read_field(path)});
    }
    return stats::ortho_stats(sections);
  }

  void run() {
    const stats::OrthoStats target = load_target();
    const Dims dims = target.volume_dims();
    cases::ExpandOptions opt;
    opt.sampler = sampler.config();
    opt.ortho.lr = lr;
    opt.ortho.lr_growth = lr_growth;
    opt.ortho.threshold_slope = threshold_slope;
    opt.ortho.threshold_final = threshold_final;
    opt.ortho.max_iters = max_iters;
    opt.ortho.norm = norm == "sum" ? stats::LossNormalization::Sum : stats::LossNormalization::Mean;
    opt.ortho.steps = opt.sampler.steps;
    opt.samples = samples;
    opt.seed = seed;
    if (samples < 1) throw ValidationError("--samples must be >= 1");
    opt.sampler.validate();
    diffusion::OrthoStatsCondition(target, opt.ortho);  // validates the optimizer settings
    auto den = load_denoiser(denoiser, target.channels, dims);
    const auto type = parse_dtype(dtype);
    if (dry_run("expand", {{"volume_dims", dims_json(dims)},
                           {"channels", target.channels},
                           {"samples", samples},
                           {"sampler", sampler_json(opt.sampler)},
                           {"final_threshold", threshold_slope + threshold_final},
                           {"out", out}})) {
      return;
    }
    emit({{"event", "start"}, {"command", "expand"}, {"samples", samples}});
    const auto r = cases::expand(target, *den, opt);
    fs::create_directories(out);
    json per_sample = json::array();
    double max_err = 0.0;
    for (std::size_t i = 0; i < r.samples.size(); ++i) {
      const fs::path p = fs::path(out) / ("sample_" + std::to_string(i) + ".pmf");
      io::write_field(p, r.samples[i], type);
      int iterations = 0;
      bool capped = false;
      for (const auto& s : r.reports[i]) {
        iterations += s.iterations;
        capped = capped || s.hit_max_iters;
      }
      for (double e : r.plane_err[i]) max_err = std::max(max_err, e);
      per_sample.push_back({{"path", p.string()},
                            {"plane_err", r.plane_err[i]},
                            {"plane_max_abs", r.plane_max_abs[i]},
                            {"iterations", iterations},
                            {"hit_max_iters", capped}});
    }
    bool converged = max_err <= threshold_slope + threshold_final;
    for (const auto& s : per_sample) converged = converged && !s.at("hit_max_iters").get<bool>();
    const json report{
        {"command", "expand"}, {"samples", per_sample}, {"max_plane_err", max_err}, {"converged", converged}};
    io::write_json(fs::path(out) / "report.json", report);
    print_report(report);
  }
};

// ---------------------------------------------------------------- render-slice

struct RenderCmd {
  std::string input;
  std::string axis = "z";
  std::int64_t index = 0;
  std::string out;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("render-slice", "Write one slice of a 3-channel field as an RGB PNG");
    c->add_option("--input", input, "PMF1 field with 3 channels")->required()->check(CLI::ExistingFile);
    c->add_option("--axis", axis, "Slice normal")->check(CLI::IsMember({"x", "y", "z"}))->capture_default_str();
    c->add_option("--index", index)->capture_default_str();
    c->add_option("--out", out, "PNG file")->required();
    c->callback([this] { run(); });
  }

  void run() {
    const Field3 f = io::read_field(input);
    const Axis a = kAxisMap.at(axis);
    if (f.channels() != 3) throw ValidationError("render-slice needs 3 channels, got " + std::to_string(f.channels()));
    if (index < 0 || index >= f.dims().extent(a)) {
      throw ValidationError("--index " + std::to_string(index) + " out of range [0, " +
                            std::to_string(f.dims().extent(a)) + ")");
    }
    if (dry_run("render-slice", {{"input", input}, {"axis", axis}, {"index", index}, {"out", out}})) return;
    const auto img = cases::render_slice(f, a, index);
    cases::write_png(out, img);
    print_report({{"command", "render-slice"}, {"out", out}, {"width", img.width}, {"height", img.height}});
  }
};

int fail(int code, const std::string& type, const std::string& message) {
  std::cerr << json{{"error", {{"type", type}, {"message", message}, {"exit_code", code}}}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Statistics-driven synthetic microstructure generation"};
  app.require_subcommand(1);
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_config("--config", "", "TOML/INI file with option values; command-line flags take precedence");
  app.add_flag("--progress", g_opts.progress, "JSON-lines progress events on stderr");
  app.add_flag("--dry-run", g_opts.dry_run, "Validate and print the plan without computing");
  app.add_option("--threads", g_opts.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();

  GenKernelsCmd gen_kernels;
  SampleGrfCmd sample_grf;
  DatagenCmd datagen;
  StatsCmd stats_cmd;
  PcaCmd pca;
  SuperresCmd superres;
  ExpandCmd expand;
  RenderCmd render;
  gen_kernels.add(app);
  sample_grf.add(app);
  datagen.add(app);
  stats_cmd.add(app);
  pca.add(app);
  superres.add(app);
  expand.add(app);
  render.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kExitValidation, "UsageError", e.what());
  } catch (const ConvergenceError& e) {
    return fail(kExitConvergence, "ConvergenceError", e.what());
  } catch (const ValidationError& e) {
    return fail(kExitValidation, dynamic_cast<const DimensionError*>(&e) ? "DimensionError" : "ValidationError",
                e.what());
  } catch (const FormatError& e) {
    return fail(kExitValidation, "FormatError", e.what());
  } catch (const DegenerateError& e) {
    return fail(kExitRuntime, "DegenerateError", e.what());
  } catch (const NumericalError& e) {
    return fail(kExitRuntime, "NumericalError", e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(kExitValidation, "FormatError", e.what());
  } catch (const std::exception& e) {
    return fail(kExitRuntime, "Error", e.what());
  }
  return 0;
}
