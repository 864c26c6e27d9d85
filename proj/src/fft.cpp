#include "microsynth/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>

#include "microsynth/errors.hpp"

namespace microsynth {
namespace {

enum class PlanKind { R2C, C2R, C2CForward, C2CBackward };

using PlanKey = std::tuple<PlanKind, std::int64_t, std::int64_t, std::int64_t>;

// FFTW's planner is not thread-safe; execution with the new-array interface is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

fftw_plan cached_plan(PlanKind kind, const Dims& d) {
  static std::map<PlanKey, fftw_plan> cache;
  std::lock_guard<std::mutex> lock(planner_mutex());
  const PlanKey key{kind, d.x, d.y, d.z};
  if (auto it = cache.find(key); it != cache.end()) return it->second;

  const int nz = static_cast<int>(d.z), ny = static_cast<int>(d.y), nx = static_cast<int>(d.x);
  const std::size_t real_n = d.voxels();
  const std::size_t half_n = static_cast<std::size_t>(d.z * d.y * (d.x / 2 + 1));
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  fftw_plan plan = nullptr;
  switch (kind) {
    case PlanKind::R2C: {
      auto* in = fftw_alloc_real(real_n);
      auto* out = fftw_alloc_complex(half_n);
      plan = fftw_plan_dft_r2c_3d(nz, ny, nx, in, out, flags);
      fftw_free(in);
      fftw_free(out);
      break;
    }
    case PlanKind::C2R: {
      auto* in = fftw_alloc_complex(half_n);
      auto* out = fftw_alloc_real(real_n);
      plan = fftw_plan_dft_c2r_3d(nz, ny, nx, in, out, flags | FFTW_DESTROY_INPUT);
      fftw_free(in);
      fftw_free(out);
      break;
    }
    case PlanKind::C2CForward:
    case PlanKind::C2CBackward: {
      auto* buf = fftw_alloc_complex(real_n);
      plan = fftw_plan_dft_3d(nz, ny, nx, buf, buf, kind == PlanKind::C2CForward ? FFTW_FORWARD : FFTW_BACKWARD,
                              flags);
      fftw_free(buf);
      break;
    }
  }
  if (plan == nullptr) throw Error("FFTW failed to create a plan for " + to_string(d));
  cache.emplace(key, plan);
  return plan;
}

}  // namespace

RealFft3::RealFft3(Dims dims) : dims_(dims) {
  dims_.validate();
  spectrum_size_ = static_cast<std::size_t>(dims_.z * dims_.y * (dims_.x / 2 + 1));
  forward_plan_ = cached_plan(PlanKind::R2C, dims_);
  inverse_plan_ = cached_plan(PlanKind::C2R, dims_);
}

void RealFft3::forward(std::span<const double> in, std::span<Complex> out) const {
  if (in.size() != real_size() || out.size() != spectrum_size_) {
    throw ValidationError("RealFft3::forward size mismatch");
  }
  // r2c never writes its input.
  fftw_execute_dft_r2c(static_cast<fftw_plan>(forward_plan_), const_cast<double*>(in.data()),
                       reinterpret_cast<fftw_complex*>(out.data()));
}

std::vector<Complex> RealFft3::forward(std::span<const double> in) const {
  std::vector<Complex> out(spectrum_size_);
  forward(in, out);
  return out;
}

void RealFft3::inverse(std::span<const Complex> in, std::span<double> out) const {
  if (in.size() != spectrum_size_ || out.size() != real_size()) {
    throw ValidationError("RealFft3::inverse size mismatch");
  }
  std::vector<Complex> scratch(in.begin(), in.end());
  fftw_execute_dft_c2r(static_cast<fftw_plan>(inverse_plan_), reinterpret_cast<fftw_complex*>(scratch.data()),
                       out.data());
}

ComplexFft3::ComplexFft3(Dims dims) : dims_(dims) {
  dims_.validate();
  forward_plan_ = cached_plan(PlanKind::C2CForward, dims_);
  backward_plan_ = cached_plan(PlanKind::C2CBackward, dims_);
}

void ComplexFft3::forward(std::span<Complex> data) const {
  if (data.size() != dims_.voxels()) throw ValidationError("ComplexFft3 size mismatch");
  auto* p = reinterpret_cast<fftw_complex*>(data.data());
  fftw_execute_dft(static_cast<fftw_plan>(forward_plan_), p, p);
}

void ComplexFft3::backward(std::span<Complex> data) const {
  if (data.size() != dims_.voxels()) throw ValidationError("ComplexFft3 size mismatch");
  auto* p = reinterpret_cast<fftw_complex*>(data.data());
  fftw_execute_dft(static_cast<fftw_plan>(backward_plan_), p, p);
}

std::vector<double> fftshift(std::span<const double> values, const Dims& dims) {
  std::vector<double> out(values.size());
  for (std::int64_t z = 0; z < dims.z; ++z) {
    for (std::int64_t y = 0; y < dims.y; ++y) {
      for (std::int64_t x = 0; x < dims.x; ++x) {
        const std::int64_t tx = (x + dims.x / 2) % dims.x;
        const std::int64_t ty = (y + dims.y / 2) % dims.y;
        const std::int64_t tz = (z + dims.z / 2) % dims.z;
        out[dims.index(tx, ty, tz)] = values[dims.index(x, y, z)];
      }
    }
  }
  return out;
}

}  // namespace microsynth
