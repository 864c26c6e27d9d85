#include "microsynth/io.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <unistd.h>

#include "microsynth/errors.hpp"

namespace microsynth::io {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'P', 'M', 'F', 'I', 'E', 'L', 'D', '1'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

fs::path temp_sibling(const fs::path& path) {
  static std::atomic<std::uint64_t> counter{0};
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  return tmp;
}

void write_bytes_atomic(const fs::path& path, const char* data, std::size_t size) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(data, static_cast<std::streamsize>(size));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error("write failed for " + path.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error("cannot move " + tmp.string() + " to " + path.string());
  }
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path sidecar(const fs::path& path) {
  fs::path p = path;
  p += ".json";
  return p;
}

Field3 pair_grid_as_field(const PairGrid& grid) {
  grid.validate();
  Field3 f(static_cast<int>(grid.pairs.size()), grid.dims);
  for (std::size_t p = 0; p < grid.pairs.size(); ++p) {
    auto ch = f.channel(static_cast<int>(p));
    std::copy(grid.values[p].begin(), grid.values[p].end(), ch.begin());
  }
  return f;
}

nlohmann::json pair_header(const PairGrid& grid, const char* kind) {
  nlohmann::json doc;
  doc["schema"] = std::string("microsynth.") + kind + "/1";
  doc["channels"] = grid.channels;
  doc["dims"] = {grid.dims.x, grid.dims.y, grid.dims.z};
  doc["offset_origin"] = "index 0 holds r = 0; offsets wrap periodically";
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : grid.pairs) pairs.push_back({p.first, p.second});
  doc["pairs"] = pairs;
  return doc;
}

void load_pair_grid(const fs::path& path, PairGrid& grid, nlohmann::json& doc, const char* kind) {
  doc = read_json(sidecar(path));
  if (doc.value("schema", std::string()) != std::string("microsynth.") + kind + "/1") {
    throw FormatError(sidecar(path).string() + " is not a " + kind + " header");
  }
  const Field3 f = read_field(path);
  grid.dims = f.dims();
  grid.channels = doc.at("channels").get<int>();
  grid.pairs.clear();
  for (const auto& p : doc.at("pairs")) grid.pairs.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
  if (static_cast<int>(grid.pairs.size()) != f.channels()) {
    throw FormatError("pair list of " + path.string() + " does not match its channel count");
  }
  grid.values.clear();
  for (int c = 0; c < f.channels(); ++c) {
    const auto ch = f.channel(c);
    grid.values.emplace_back(ch.begin(), ch.end());
  }
  grid.validate();
}

std::array<double, 3> vec3(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw FormatError("expected a 3-vector");
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

}  // namespace

std::vector<std::uint8_t> encode_field(const Field3& field, DType dtype) {
  if (field.empty()) throw ValidationError("cannot write an empty field");
  const Dims& d = field.dims();
  constexpr auto u32max = std::numeric_limits<std::uint32_t>::max();
  if (d.x > u32max || d.y > u32max || d.z > u32max || field.channels() < 1) {
    throw DimensionError("field dims do not fit the PMF1 header");
  }
  std::vector<std::uint8_t> out;
  const std::size_t width = dtype == DType::F32 ? 4 : 8;
  out.reserve(kPmfHeaderSize + field.size() * width);
  out.resize(8);
  std::memcpy(out.data(), kMagic, 8);
  put_le<std::uint32_t>(out, kPmfVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(field.channels()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.x));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.y));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.z));
  out.push_back(static_cast<std::uint8_t>(dtype));
  for (int i = 0; i < 3; ++i) out.push_back(0);
  for (double v : field.data()) {
    if (dtype == DType::F32) {
      put_le<float>(out, static_cast<float>(v));
    } else {
      put_le<double>(out, v);
    }
  }
  return out;
}

Field3 decode_field(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kPmfHeaderSize) throw FormatError("PMF1 file truncated: header incomplete");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw FormatError("not a PMF1 file (bad magic)");
  const auto version = get_le<std::uint32_t>(&bytes[8]);
  if (version != kPmfVersion) throw FormatError("unsupported PMF1 version " + std::to_string(version));
  const auto h = get_le<std::uint32_t>(&bytes[12]);
  const auto dx = get_le<std::uint32_t>(&bytes[16]);
  const auto dy = get_le<std::uint32_t>(&bytes[20]);
  const auto dz = get_le<std::uint32_t>(&bytes[24]);
  const auto dtype = bytes[28];
  if (dtype > 1) throw FormatError("unknown PMF1 dtype " + std::to_string(dtype));
  if (h == 0 || h > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) {
    throw FormatError("PMF1 channel count out of range");
  }
  const Dims dims{dx, dy, dz};
  dims.validate();  // rejects zero extents and overflowing products
  const std::size_t width = dtype == 0 ? 4 : 8;
  const std::size_t voxels = dims.voxels();
  if (voxels > std::numeric_limits<std::size_t>::max() / h / width) throw DimensionError("PMF1 payload overflows");
  const std::size_t count = voxels * h;
  if (bytes.size() != kPmfHeaderSize + count * width) {
    throw FormatError("PMF1 payload has " + std::to_string(bytes.size() - kPmfHeaderSize) + " bytes, expected " +
                      std::to_string(count * width));
  }
  Field3 field(static_cast<int>(h), dims);
  auto& data = field.data();
  const std::uint8_t* p = bytes.data() + kPmfHeaderSize;
  for (std::size_t i = 0; i < count; ++i, p += width) {
    data[i] = dtype == 0 ? static_cast<double>(get_le<float>(p)) : get_le<double>(p);
  }
  return field;
}

void write_field(const fs::path& path, const Field3& field, DType dtype) {
  const auto bytes = encode_field(field, dtype);
  write_bytes_atomic(path, reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

Field3 read_field(const fs::path& path) { return decode_field(read_bytes(path)); }

void write_stats(const fs::path& path, const StatsMap& stats, DType dtype) {
  auto doc = pair_header(stats, "stats");
  doc["means"] = stats.means;
  write_field(path, pair_grid_as_field(stats), dtype);
  write_json(sidecar(path), doc);
}

StatsMap read_stats(const fs::path& path) {
  StatsMap stats;
  nlohmann::json doc;
  load_pair_grid(path, stats, doc, "stats");
  stats.means = doc.at("means").get<std::vector<double>>();
  return stats;
}

void write_covariance(const fs::path& path, const CovarianceGrid& cov, DType dtype) {
  write_field(path, pair_grid_as_field(cov), dtype);
  write_json(sidecar(path), pair_header(cov, "covariance"));
}

CovarianceGrid read_covariance(const fs::path& path) {
  CovarianceGrid cov;
  nlohmann::json doc;
  load_pair_grid(path, cov, doc, "covariance");
  return cov;
}

void write_text(const fs::path& path, const std::string& text) { write_bytes_atomic(path, text.data(), text.size()); }

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& doc) { write_text(path, doc.dump(2) + "\n"); }

nlohmann::json to_json(const mosm::MosmParams& params) {
  nlohmann::json doc;
  doc["schema"] = kMosmSchema;
  doc["channels"] = params.channels;
  doc["mixtures"] = params.mixtures;
  doc["units"] = {{"weight", "dimensionless"},
                  {"precision", "1/length^2 on the [-pi, pi) domain"},
                  {"mean", "radians per length"},
                  {"delay", "length"},
                  {"phase", "radians"}};
  nlohmann::json comps = nlohmann::json::array();
  for (int c = 0; c < params.channels; ++c) {
    for (int q = 0; q < params.mixtures; ++q) {
      const auto& m = params.at(c, q);
      nlohmann::json prec = nlohmann::json::array();
      for (int i = 0; i < 3; ++i) prec.push_back({m.precision(i, 0), m.precision(i, 1), m.precision(i, 2)});
      comps.push_back({{"channel", c},
                       {"mixture", q},
                       {"weight", m.weight},
                       {"precision", prec},
                       {"mean", {m.mean[0], m.mean[1], m.mean[2]}},
                       {"delay", {m.delay[0], m.delay[1], m.delay[2]}},
                       {"phase", m.phase}});
    }
  }
  doc["components"] = comps;
  return doc;
}

mosm::MosmParams mosm_from_json(const nlohmann::json& doc) {
  try {
    if (doc.value("schema", std::string()) != kMosmSchema) throw FormatError("MOSM document has the wrong schema");
    mosm::MosmParams params(doc.at("channels").get<int>(), doc.at("mixtures").get<int>());
    const auto& comps = doc.at("components");
    if (comps.size() != params.components.size()) throw FormatError("MOSM document has the wrong component count");
    for (const auto& j : comps) {
      const int c = j.at("channel").get<int>();
      const int q = j.at("mixture").get<int>();
      if (c < 0 || c >= params.channels || q < 0 || q >= params.mixtures) {
        throw FormatError("MOSM component index out of range");
      }
      auto& m = params.at(c, q);
      m.weight = j.at("weight").get<double>();
      const auto& prec = j.at("precision");
      if (prec.size() != 3) throw FormatError("precision must be 3x3");
      for (int i = 0; i < 3; ++i) {
        const auto row = vec3(prec.at(static_cast<std::size_t>(i)));
        for (int k = 0; k < 3; ++k) m.precision(i, k) = row[static_cast<std::size_t>(k)];
      }
      const auto mean = vec3(j.at("mean"));
      const auto delay = vec3(j.at("delay"));
      for (int k = 0; k < 3; ++k) {
        m.mean[k] = mean[static_cast<std::size_t>(k)];
        m.delay[k] = delay[static_cast<std::size_t>(k)];
      }
      m.phase = j.at("phase").get<double>();
    }
    params.validate();
    return params;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed MOSM document: ") + e.what());
  }
}

nlohmann::json to_json(const mosm::ParamBounds& b) {
  auto range = [](const mosm::Range& r) { return nlohmann::json{{"min", r.min}, {"max", r.max}}; };
  return {{"schema", kBoundsSchema},
          {"precision_root", range(b.precision_root)},
          {"mean", range(b.mean)},
          {"weight", range(b.weight)},
          {"delay", range(b.delay)},
          {"phase", range(b.phase)}};
}

mosm::ParamBounds bounds_from_json(const nlohmann::json& doc) {
  try {
    if (doc.value("schema", std::string()) != kBoundsSchema) throw FormatError("bounds document has the wrong schema");
    mosm::ParamBounds b;
    auto range = [&](const char* key, mosm::Range& r) {
      if (doc.contains(key)) r = {doc.at(key).at("min").get<double>(), doc.at(key).at("max").get<double>()};
    };
    range("precision_root", b.precision_root);
    range("mean", b.mean);
    range("weight", b.weight);
    range("delay", b.delay);
    range("phase", b.phase);
    b.validate();
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed bounds document: ") + e.what());
  }
}

}  // namespace microsynth::io
