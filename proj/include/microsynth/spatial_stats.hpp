#pragma once

// Two-point spatial statistics of periodic multi-channel fields:
//
//   f_r^{beta gamma} = (1/S) sum_s m_s^beta m_{s+r}^gamma
//
// evaluated through the FFT cross-spectrum (1/S) conj(M^beta) M^gamma, plus
// the orthogonal-plane subsets used for 2D -> 3D conditioning and the
// analytic gradient of the plane-matching loss.

#include <array>
#include <span>
#include <vector>

#include "microsynth/fft.hpp"
#include "microsynth/field.hpp"
#include "microsynth/grids.hpp"

namespace microsynth::stats {

StatsMap two_point_stats(const Field3& field, std::span<const ChannelPair> pairs);
StatsMap two_point_stats(const Field3& field, PairSelection selection = PairSelection::Full);

/// Literal double sum. Refuses grids with more than kBruteForceMaxVoxels voxels.
inline constexpr std::size_t kBruteForceMaxVoxels = 4096;
StatsMap two_point_stats_bruteforce(const Field3& field, std::span<const ChannelPair> pairs);

/// Sigma^{ab} = f^{ab} - mu^a mu^b.
CovarianceGrid cov_from_stats(const StatsMap& stats);
StatsMap stats_from_cov(const CovarianceGrid& cov, std::span<const double> means);

/// One plane of offsets through r = 0. `dims` is the volume grid with the
/// normal axis collapsed to 1, so values index like a Field3 channel.
struct OrthoPlane {
  Axis normal = Axis::X;
  Dims dims{};
  std::vector<std::vector<double>> values;  // per pair
};

struct OrthoStats {
  int channels = 0;
  std::vector<ChannelPair> pairs;
  std::array<OrthoPlane, 3> planes;  // indexed by normal axis

  /// Volume grid implied by the three planes; throws if they disagree.
  Dims volume_dims() const;
  std::size_t element_count() const;
};

/// Planes r_x = 0, r_y = 0, r_z = 0 of the full 3D statistics.
OrthoStats ortho_stats(const Field3& field, PairSelection selection = PairSelection::Full);
OrthoStats ortho_stats(const Field3& field, std::span<const ChannelPair> pairs);

/// A 2D section whose normal axis has extent 1 in `image.dims()`.
struct AxisImage {
  Axis normal = Axis::X;
  Field3 image;
};

/// Periodic 2D statistics of three orthogonal sections, one per axis.
OrthoStats ortho_stats(std::span<const AxisImage> images, PairSelection selection = PairSelection::Full);

/// Sum: plain sum of squares over planes, pairs and offsets.
/// Mean: the same sum divided by OrthoStats::element_count().
enum class LossNormalization { Sum, Mean };

struct StatsLoss {
  double err = 0.0;
  std::array<double, 3> plane_err{};  // same normalization; sums to err
  Field3 grad;                        // empty when not requested
};

/// Reusable evaluator of err = || f_perp(x) - target ||^2 and its gradient.
/// Not thread-safe; one instance per thread.
class OrthoStatsObjective {
 public:
  OrthoStatsObjective(OrthoStats target, LossNormalization norm = LossNormalization::Sum);

  const OrthoStats& target() const { return target_; }
  StatsLoss evaluate(const Field3& field, bool with_gradient) const;
  /// Max |f_perp(x) - target| per plane.
  std::array<double, 3> max_abs_error(const Field3& field) const;

 private:
  OrthoStats target_;
  LossNormalization norm_;
  Dims dims_;
  RealFft3 fft_;
};

StatsLoss stats_loss_and_grad(const Field3& field, const OrthoStats& target,
                              LossNormalization norm = LossNormalization::Sum);

}  // namespace microsynth::stats
