#pragma once

#include <complex>
#include <span>
#include <vector>

#include "microsynth/field.hpp"

namespace microsynth {

using Complex = std::complex<double>;

/// Real-to-complex 3D DFT over a grid stored x-fastest. Both directions are
/// unnormalized (inverse(forward(a)) == S * a). Plans are cached per shape and
/// shared; execution is safe from multiple threads.
class RealFft3 {
 public:
  explicit RealFft3(Dims dims);

  const Dims& dims() const { return dims_; }
  std::size_t real_size() const { return dims_.voxels(); }
  /// Half-spectrum length: Dz * Dy * (Dx/2 + 1).
  std::size_t spectrum_size() const { return spectrum_size_; }
  std::int64_t half_x() const { return dims_.x / 2 + 1; }

  void forward(std::span<const double> in, std::span<Complex> out) const;
  std::vector<Complex> forward(std::span<const double> in) const;
  /// The input is left untouched.
  void inverse(std::span<const Complex> in, std::span<double> out) const;

 private:
  Dims dims_;
  std::size_t spectrum_size_;
  void* forward_plan_;
  void* inverse_plan_;
};

/// Complex 3D DFT (full spectrum), unnormalized, in place.
class ComplexFft3 {
 public:
  explicit ComplexFft3(Dims dims);

  void forward(std::span<Complex> data) const;
  void backward(std::span<Complex> data) const;

 private:
  Dims dims_;
  void* forward_plan_;
  void* backward_plan_;
};

/// Moves offset r=0 from index 0 to the grid centre (for rendering only).
std::vector<double> fftshift(std::span<const double> values, const Dims& dims);

}  // namespace microsynth
