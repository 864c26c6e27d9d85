#include "microsynth/field.hpp"

#include <cmath>
#include <limits>

#include "microsynth/errors.hpp"

namespace microsynth {

std::string to_string(Axis axis) {
  switch (axis) {
    case Axis::X: return "x";
    case Axis::Y: return "y";
    case Axis::Z: return "z";
  }
  return "?";
}

Axis parse_axis(const std::string& name) {
  if (name == "x" || name == "X") return Axis::X;
  if (name == "y" || name == "Y") return Axis::Y;
  if (name == "z" || name == "Z") return Axis::Z;
  throw ValidationError("unknown axis '" + name + "' (expected x, y or z)");
}

void Dims::validate() const {
  if (x < 1 || y < 1 || z < 1) {
    throw DimensionError("grid dimensions must be positive, got " + to_string(*this));
  }
  constexpr auto kMax = static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max());
  const auto ux = static_cast<std::uint64_t>(x);
  const auto uy = static_cast<std::uint64_t>(y);
  const auto uz = static_cast<std::uint64_t>(z);
  if (ux > kMax / uy || ux * uy > kMax / uz) {
    throw DimensionError("grid voxel count overflows: " + to_string(*this));
  }
}

std::size_t Dims::voxels() const {
  return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
}

std::int64_t Dims::extent(Axis axis) const {
  switch (axis) {
    case Axis::X: return x;
    case Axis::Y: return y;
    case Axis::Z: return z;
  }
  return 0;
}

std::string to_string(const Dims& dims) {
  return std::to_string(dims.x) + "x" + std::to_string(dims.y) + "x" + std::to_string(dims.z);
}

Field3::Field3(int channels, Dims dims, double fill) : channels_(channels), dims_(dims) {
  if (channels < 1) throw DimensionError("field needs at least one channel");
  dims.validate();
  voxels_ = dims.voxels();
  if (voxels_ > std::numeric_limits<std::size_t>::max() / static_cast<std::size_t>(channels)) {
    throw DimensionError("field size overflows");
  }
  data_.assign(voxels_ * static_cast<std::size_t>(channels), fill);
}

std::span<double> Field3::channel(int c) {
  return {data_.data() + static_cast<std::size_t>(c) * voxels_, voxels_};
}

std::span<const double> Field3::channel(int c) const {
  return {data_.data() + static_cast<std::size_t>(c) * voxels_, voxels_};
}

std::vector<double> Field3::channel_means() const {
  std::vector<double> means(static_cast<std::size_t>(channels_), 0.0);
  for (int c = 0; c < channels_; ++c) {
    double sum = 0.0;
    for (double v : channel(c)) sum += v;
    means[static_cast<std::size_t>(c)] = sum / static_cast<double>(voxels_);
  }
  return means;
}

bool Field3::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Field3 circular_shift(const Field3& field, std::int64_t sx, std::int64_t sy, std::int64_t sz) {
  const Dims& d = field.dims();
  Field3 out(field.channels(), d);
  auto wrap = [](std::int64_t i, std::int64_t n) { return ((i % n) + n) % n; };
  for (int c = 0; c < field.channels(); ++c) {
    for (std::int64_t z = 0; z < d.z; ++z) {
      for (std::int64_t y = 0; y < d.y; ++y) {
        for (std::int64_t x = 0; x < d.x; ++x) {
          out.at(c, wrap(x + sx, d.x), wrap(y + sy, d.y), wrap(z + sz, d.z)) = field.at(c, x, y, z);
        }
      }
    }
  }
  return out;
}

Field3 extract_slice(const Field3& field, Axis normal, std::int64_t index) {
  const Dims& d = field.dims();
  if (index < 0 || index >= d.extent(normal)) {
    throw ValidationError("slice index " + std::to_string(index) + " out of range along " + to_string(normal));
  }
  Dims sd = d;
  switch (normal) {
    case Axis::X: sd.x = 1; break;
    case Axis::Y: sd.y = 1; break;
    case Axis::Z: sd.z = 1; break;
  }
  Field3 out(field.channels(), sd);
  for (int c = 0; c < field.channels(); ++c) {
    for (std::int64_t z = 0; z < sd.z; ++z) {
      for (std::int64_t y = 0; y < sd.y; ++y) {
        for (std::int64_t x = 0; x < sd.x; ++x) {
          const std::int64_t gx = normal == Axis::X ? index : x;
          const std::int64_t gy = normal == Axis::Y ? index : y;
          const std::int64_t gz = normal == Axis::Z ? index : z;
          out.at(c, x, y, z) = field.at(c, gx, gy, gz);
        }
      }
    }
  }
  return out;
}

}  // namespace microsynth
