#include "microsynth/grids.hpp"

#include "microsynth/errors.hpp"

namespace microsynth {

std::vector<ChannelPair> select_pairs(int channels, PairSelection selection) {
  if (channels < 1) throw ValidationError("channel count must be positive");
  std::vector<ChannelPair> pairs;
  if (selection == PairSelection::ReferenceRow) {
    for (int g = 0; g < channels; ++g) pairs.push_back({0, g});
  } else {
    for (int b = 0; b < channels; ++b) {
      for (int g = 0; g < channels; ++g) pairs.push_back({b, g});
    }
  }
  return pairs;
}

const std::vector<double>* PairGrid::find(int beta, int gamma) const {
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].first == beta && pairs[i].second == gamma) return &values[i];
  }
  return nullptr;
}

std::vector<double>* PairGrid::find(int beta, int gamma) {
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].first == beta && pairs[i].second == gamma) return &values[i];
  }
  return nullptr;
}

const std::vector<double>& PairGrid::at(int beta, int gamma) const {
  if (const auto* v = find(beta, gamma)) return *v;
  throw ValidationError("channel pair (" + std::to_string(beta) + "," + std::to_string(gamma) + ") not present");
}

void PairGrid::validate() const {
  dims.validate();
  if (pairs.size() != values.size()) throw ValidationError("pair list and value grids differ in length");
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    if (p.first < 0 || p.first >= channels || p.second < 0 || p.second >= channels) {
      throw ValidationError("channel pair index out of range");
    }
    if (values[i].size() != dims.voxels()) {
      throw DimensionError("pair grid has " + std::to_string(values[i].size()) + " values, expected " +
                           std::to_string(dims.voxels()));
    }
  }
}

bool CovarianceGrid::is_reference_row() const {
  if (static_cast<int>(pairs.size()) != channels) return false;
  for (int g = 0; g < channels; ++g) {
    if (!(pairs[static_cast<std::size_t>(g)] == ChannelPair{0, g})) return false;
  }
  return true;
}

}  // namespace microsynth
