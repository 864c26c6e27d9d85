#pragma once

#include <vector>

#include "microsynth/field.hpp"

namespace microsynth {

/// Ordered channel pair (beta, gamma) of a two-point function f^{beta gamma}.
struct ChannelPair {
  int first = 0;
  int second = 0;
  friend bool operator==(const ChannelPair&, const ChannelPair&) = default;
};

enum class PairSelection {
  Full,          ///< all H x H ordered pairs
  ReferenceRow,  ///< (0, gamma) for every gamma
};

std::vector<ChannelPair> select_pairs(int channels, PairSelection selection);

/// Two-point functions over the voxel offset lattice, one grid per channel
/// pair. Offset r = 0 sits at index 0; negative offsets wrap (no fftshift).
struct PairGrid {
  Dims dims{};
  int channels = 0;
  std::vector<ChannelPair> pairs;
  std::vector<std::vector<double>> values;

  /// nullptr when the pair is not stored.
  const std::vector<double>* find(int beta, int gamma) const;
  std::vector<double>* find(int beta, int gamma);
  /// Throws ValidationError if the pair is not stored.
  const std::vector<double>& at(int beta, int gamma) const;
  void validate() const;
};

/// Zero-mean covariance Sigma^{beta gamma}(r). For MOGRF input this holds the
/// reference row k_{0 gamma}.
struct CovarianceGrid : PairGrid {
  bool is_reference_row() const;
};

/// Two-point statistics f_r^{beta gamma} together with the 1-point means.
struct StatsMap : PairGrid {
  std::vector<double> means;
};

}  // namespace microsynth
