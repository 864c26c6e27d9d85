#pragma once

// PMF1 field files and JSON documents.
//
// PMF1 layout (little-endian):
//   bytes 0..7    magic "PMFIELD1"
//   bytes 8..11   u32 version (1)
//   bytes 12..15  u32 H (channels)
//   bytes 16..27  u32 Dx, Dy, Dz
//   byte  28      u8 dtype (0 = f32, 1 = f64)
//   bytes 29..31  reserved, zero
//   then H * Dz * Dy * Dx values, channel-major, x fastest.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "microsynth/field.hpp"
#include "microsynth/grids.hpp"
#include "microsynth/mosm.hpp"

namespace microsynth::io {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

inline constexpr std::uint32_t kPmfVersion = 1;
inline constexpr std::size_t kPmfHeaderSize = 32;

/// Serialized bytes of a field (header + payload).
std::vector<std::uint8_t> encode_field(const Field3& field, DType dtype = DType::F32);
Field3 decode_field(const std::vector<std::uint8_t>& bytes);

/// Writes via a temporary file in the same directory and renames it into place.
void write_field(const std::filesystem::path& path, const Field3& field, DType dtype = DType::F32);
Field3 read_field(const std::filesystem::path& path);

/// Pair grids are stored as a PMF1 file with one channel per pair plus a JSON
/// sidecar (`<path>.json`) listing the pairs, channel count and means.
void write_stats(const std::filesystem::path& path, const StatsMap& stats, DType dtype = DType::F64);
StatsMap read_stats(const std::filesystem::path& path);
void write_covariance(const std::filesystem::path& path, const CovarianceGrid& cov, DType dtype = DType::F64);
CovarianceGrid read_covariance(const std::filesystem::path& path);

/// Atomic text write (temp file + rename).
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

inline constexpr const char* kMosmSchema = "microsynth.mosm_params/1";
inline constexpr const char* kBoundsSchema = "microsynth.param_bounds/1";

nlohmann::json to_json(const mosm::MosmParams& params);
mosm::MosmParams mosm_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const mosm::ParamBounds& bounds);
mosm::ParamBounds bounds_from_json(const nlohmann::json& doc);

}  // namespace microsynth::io
