#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace microsynth {

enum class Axis : int { X = 0, Y = 1, Z = 2 };

std::string to_string(Axis axis);
Axis parse_axis(const std::string& name);

/// Extent of a periodic voxel grid. Memory order is x fastest, then y, then z.
struct Dims {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t z = 0;

  /// Throws DimensionError if any extent is < 1 or the voxel count overflows.
  void validate() const;
  std::size_t voxels() const;
  std::int64_t extent(Axis axis) const;
  std::size_t index(std::int64_t ix, std::int64_t iy, std::int64_t iz) const {
    return static_cast<std::size_t>((iz * y + iy) * x + ix);
  }

  friend bool operator==(const Dims&, const Dims&) = default;
};

std::string to_string(const Dims& dims);

/// Multi-channel real field on a periodic grid, stored channel-major
/// ([channel][z][y][x]).
class Field3 {
 public:
  Field3() = default;
  Field3(int channels, Dims dims, double fill = 0.0);

  int channels() const { return channels_; }
  const Dims& dims() const { return dims_; }
  std::size_t voxels() const { return voxels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> channel(int c);
  std::span<const double> channel(int c) const;

  double& at(int c, std::int64_t ix, std::int64_t iy, std::int64_t iz) {
    return data_[static_cast<std::size_t>(c) * voxels_ + dims_.index(ix, iy, iz)];
  }
  double at(int c, std::int64_t ix, std::int64_t iy, std::int64_t iz) const {
    return data_[static_cast<std::size_t>(c) * voxels_ + dims_.index(ix, iy, iz)];
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  /// Per-channel spatial mean.
  std::vector<double> channel_means() const;
  bool all_finite() const;

 private:
  int channels_ = 0;
  Dims dims_{};
  std::size_t voxels_ = 0;
  std::vector<double> data_;
};

/// Circular shift by (sx, sy, sz) voxels: out(s + shift) = in(s).
Field3 circular_shift(const Field3& field, std::int64_t sx, std::int64_t sy, std::int64_t sz);

/// Copies one axis-aligned slice as a field with that axis collapsed to 1.
Field3 extract_slice(const Field3& field, Axis normal, std::int64_t index);

/// Wraps a lattice index into the signed range used for offsets:
/// [0, n/2) stays, [n/2, n) maps to negative values.
inline std::int64_t signed_offset(std::int64_t i, std::int64_t n) { return i < (n + 1) / 2 ? i : i - n; }

/// Lattice index of (-i) mod n.
inline std::int64_t negate_index(std::int64_t i, std::int64_t n) { return i == 0 ? 0 : n - i; }

}  // namespace microsynth
