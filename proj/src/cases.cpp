#include "microsynth/cases.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

#include <png.h>

#include "microsynth/errors.hpp"
#include "microsynth/io.hpp"

namespace microsynth::cases {

diffusion::Mask superres_mask(const Field3& low, Axis axis, int factor) {
  if (factor < 2) throw ValidationError("super-resolution factor must be >= 2");
  if (low.empty()) throw ValidationError("super-resolution input is empty");
  Dims hi = low.dims();
  switch (axis) {
    case Axis::X: hi.x *= factor; break;
    case Axis::Y: hi.y *= factor; break;
    case Axis::Z: hi.z *= factor; break;
  }
  diffusion::Mask mask(low.channels(), hi);
  const Dims& d = low.dims();
  for (int c = 0; c < low.channels(); ++c) {
    for (std::int64_t z = 0; z < d.z; ++z) {
      for (std::int64_t y = 0; y < d.y; ++y) {
        for (std::int64_t x = 0; x < d.x; ++x) {
          std::int64_t hx = x, hy = y, hz = z;
          if (axis == Axis::X) hx *= factor;
          if (axis == Axis::Y) hy *= factor;
          if (axis == Axis::Z) hz *= factor;
          mask.set(c, hx, hy, hz, low.at(c, x, y, z));
        }
      }
    }
  }
  return mask;
}

double mape(const Field3& generated, const Field3& reference) {
  if (generated.dims() != reference.dims() || generated.channels() != reference.channels()) {
    throw DimensionError("MAPE: generated and reference shapes differ");
  }
  double sum = 0.0;
  std::size_t n = 0;
  const auto& g = generated.data();
  const auto& r = reference.data();
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (std::abs(r[i]) <= 1e-12) continue;
    sum += std::abs(g[i] - r[i]) / std::abs(r[i]);
    ++n;
  }
  if (n == 0) throw ValidationError("MAPE undefined: reference is zero everywhere");
  return 100.0 * sum / static_cast<double>(n);
}

SuperresResult superres(const Field3& low, diffusion::Denoiser& denoiser, const SuperresOptions& options,
                        const Field3* reference) {
  if (options.samples < 1) throw ValidationError("super-resolution needs samples >= 1");
  options.sampler.validate();
  const diffusion::Mask mask = superres_mask(low, options.axis, options.factor);
  if (denoiser.dims() != mask.dims() || denoiser.channels() != mask.channels()) {
    throw DimensionError("denoiser grid " + to_string(denoiser.dims()) + " does not match the upsampled grid " +
                         to_string(mask.dims()));
  }
  if (reference != nullptr && (reference->dims() != mask.dims() || reference->channels() != mask.channels())) {
    throw DimensionError("reference volume does not match the upsampled grid");
  }
  if (options.sampler.skip != 0) throw ValidationError("super-resolution samples from noise; skip must be 0");

  SuperresResult out;
  out.mean = Field3(mask.channels(), mask.dims());
  out.variance = Field3(mask.channels(), mask.dims());
  std::mt19937_64 rng(options.seed);
  for (int s = 0; s < options.samples; ++s) {
    auto cond = diffusion::inpaint_cond(mask, options.fraction, options.sampler.steps);
    out.samples.push_back(diffusion::sample(nullptr, denoiser, options.sampler, rng, cond));
  }
  const double inv = 1.0 / options.samples;
  for (const auto& f : out.samples) {
    for (std::size_t i = 0; i < f.size(); ++i) out.mean.data()[i] += f.data()[i] * inv;
  }
  for (const auto& f : out.samples) {
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double d = f.data()[i] - out.mean.data()[i];
      out.variance.data()[i] += d * d * inv;
    }
  }
  if (reference != nullptr) {
    out.mape_of_mean = mape(out.mean, *reference);
    for (const auto& f : out.samples) out.mape_per_sample.push_back(mape(f, *reference));
  }
  return out;
}

ExpandResult expand(const stats::OrthoStats& target, diffusion::Denoiser& denoiser, const ExpandOptions& options) {
  if (options.samples < 1) throw ValidationError("expansion needs samples >= 1");
  options.sampler.validate();
  if (options.sampler.skip != 0) throw ValidationError("expansion samples from noise; skip must be 0");
  const Dims dims = target.volume_dims();
  if (denoiser.dims() != dims || denoiser.channels() != target.channels) {
    throw DimensionError("denoiser grid " + to_string(denoiser.dims()) + " does not match the target volume " +
                         to_string(dims));
  }
  diffusion::OrthoConfig ortho = options.ortho;
  ortho.steps = options.sampler.steps;

  ExpandResult out;
  std::mt19937_64 rng(options.seed);
  for (int s = 0; s < options.samples; ++s) {
    auto cond = std::make_shared<diffusion::OrthoStatsCondition>(target, ortho);
    Field3 x = diffusion::sample(nullptr, denoiser, options.sampler, rng,
                                 [cond](Field3& f, int step) { (*cond)(f, step); });
    out.plane_err.push_back(cond->objective().evaluate(x, false).plane_err);
    out.plane_max_abs.push_back(cond->objective().max_abs_error(x));
    out.reports.push_back(cond->reports());
    out.samples.push_back(std::move(x));
  }
  return out;
}

ExpandResult expand(std::span<const stats::AxisImage> images, diffusion::Denoiser& denoiser,
                    const ExpandOptions& options) {
  const stats::OrthoStats target = stats::ortho_stats(images);
  return expand(target, denoiser, options);
}

SliceImage render_slice(const Field3& field, Axis normal, std::int64_t index) {
  if (field.channels() != 3) {
    throw ValidationError("rendering needs exactly 3 channels, field has " + std::to_string(field.channels()));
  }
  const Dims& d = field.dims();
  if (index < 0 || index >= d.extent(normal)) {
    throw ValidationError("slice index " + std::to_string(index) + " out of range [0, " +
                          std::to_string(d.extent(normal)) + ")");
  }
  // Image axes: the two remaining axes in x, y, z order (first = columns).
  const Axis u = normal == Axis::X ? Axis::Y : Axis::X;
  const Axis v = normal == Axis::Z ? Axis::Y : Axis::Z;
  SliceImage img;
  img.width = static_cast<std::uint32_t>(d.extent(u));
  img.height = static_cast<std::uint32_t>(d.extent(v));
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  for (std::int64_t row = 0; row < d.extent(v); ++row) {
    for (std::int64_t col = 0; col < d.extent(u); ++col) {
      std::int64_t p[3] = {0, 0, 0};
      p[static_cast<int>(normal)] = index;
      p[static_cast<int>(u)] = col;
      p[static_cast<int>(v)] = row;
      for (int c = 0; c < 3; ++c) {
        const double val = field.at(c, p[0], p[1], p[2]);
        const double scaled = std::round((std::clamp(val, -1.0, 1.0) + 1.0) * 127.5);
        img.rgb[(static_cast<std::size_t>(row) * img.width + static_cast<std::size_t>(col)) * 3 +
                static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(scaled);
      }
    }
  }
  return img;
}

void write_png(const std::filesystem::path& path, const SliceImage& image) {
  if (image.width == 0 || image.height == 0) throw ValidationError("cannot write an empty image");
  const std::filesystem::path tmp = std::filesystem::path(path.string() + ".tmp");
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(tmp.c_str(), "wb"), std::fclose);
  if (!fp) throw Error("cannot open " + tmp.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::uint32_t r = 0; r < image.height; ++r) {
    png_write_row(png, const_cast<png_bytep>(&image.rgb[static_cast<std::size_t>(r) * image.width * 3]));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  fp.reset();
  std::filesystem::rename(tmp, path);
}

}  // namespace microsynth::cases
