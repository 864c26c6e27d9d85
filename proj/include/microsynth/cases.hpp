#pragma once

// The two reconstruction case studies (super-resolution by inpainting,
// 2D -> 3D expansion by orthogonal-statistics conditioning) and slice
// rendering.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "microsynth/diffusion.hpp"
#include "microsynth/field.hpp"
#include "microsynth/spatial_stats.hpp"

namespace microsynth::cases {

/// Places slice j of `low` at position j * factor along `axis` of a grid
/// `factor` times longer on that axis.
diffusion::Mask superres_mask(const Field3& low, Axis axis, int factor);

struct SuperresOptions {
  Axis axis = Axis::Z;
  int factor = 4;
  double fraction = 0.75;
  diffusion::SamplerConfig sampler{};
  int samples = 1;
  std::uint64_t seed = 0;
};

struct SuperresResult {
  std::vector<Field3> samples;
  Field3 mean;
  Field3 variance;  // per voxel, over samples (population variance)
  std::optional<double> mape_of_mean;   // percent
  std::vector<double> mape_per_sample;  // percent; empty without a reference
};

/// Mean absolute percentage error over voxels with |reference| > 1e-12.
double mape(const Field3& generated, const Field3& reference);

SuperresResult superres(const Field3& low, diffusion::Denoiser& denoiser, const SuperresOptions& options,
                        const Field3* reference = nullptr);

struct ExpandOptions {
  diffusion::SamplerConfig sampler{};
  diffusion::OrthoConfig ortho{};  // ortho.steps is overwritten by sampler.steps
  int samples = 1;
  std::uint64_t seed = 0;
};

struct ExpandResult {
  std::vector<Field3> samples;
  std::vector<std::array<double, 3>> plane_err;      // loss per plane, configured normalization
  std::vector<std::array<double, 3>> plane_max_abs;  // max |f - target| per plane
  std::vector<std::vector<diffusion::OrthoStepReport>> reports;
};

ExpandResult expand(const stats::OrthoStats& target, diffusion::Denoiser& denoiser, const ExpandOptions& options);
/// Validates the three images before any compute.
ExpandResult expand(std::span<const stats::AxisImage> images, diffusion::Denoiser& denoiser,
                    const ExpandOptions& options);

/// RGB bytes (row-major, 3 per pixel) of one slice; channel values map
/// affinely from [-1, 1] to [0, 255] and are clamped outside.
struct SliceImage {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint8_t> rgb;
};

SliceImage render_slice(const Field3& field, Axis normal, std::int64_t index);
void write_png(const std::filesystem::path& path, const SliceImage& image);

}  // namespace microsynth::cases
