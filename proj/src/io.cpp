#include "fnp/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>

#include <nlohmann/json.hpp>

#include "byte_io.hpp"
#include "fnp/error.hpp"

namespace fnp {

namespace {

using detail::ByteReader;
using detail::ByteWriter;

constexpr char kFieldMagic[8] = {'F', 'N', 'P', 'G', 'R', 'I', 'D', '1'};
constexpr char kObsMagic[8] = {'F', 'N', 'P', 'O', 'B', 'S', '0', '1'};
constexpr std::uint32_t kMaxNameLength = 1u << 16;

float to_storage(double v, const char* what) {
  const auto f = static_cast<float>(v);
  if (std::isfinite(v) && !std::isfinite(f)) throw NumericError(std::string(what) + " value overflows f32 storage");
  return f;
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot open '" + path.string() + "' for writing");
  os << j.dump(2) << "\n";
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".json";
  return p;
}

}  // namespace

void quantize_to_storage(std::vector<double>& values) {
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

void write_field(const Field& field, const std::filesystem::path& path, bool sidecar) {
  field.validate();
  ByteWriter w;
  w.put_bytes(kFieldMagic, 8);
  w.put(static_cast<std::uint32_t>(field.grid.n_lat()));
  w.put(static_cast<std::uint32_t>(field.grid.n_lon()));
  w.put(static_cast<std::uint32_t>(field.n_channels()));
  w.put(field.grid.lat0());
  w.put(field.grid.dlat());
  w.put(field.grid.lon0());
  w.put(field.grid.dlon());
  for (const auto& ch : field.channels) w.put(ch.group);
  for (const auto& ch : field.channels) {
    if (ch.name.size() >= kMaxNameLength) throw ConfigError("channel name too long");
    w.put(static_cast<std::uint32_t>(ch.name.size()));
    w.put_bytes(ch.name.data(), ch.name.size());
  }
  for (double v : field.values) w.put(to_storage(v, "field"));
  w.save(path);

  if (sidecar) {
    nlohmann::json j;
    j["format"] = "FNPGRID1";
    j["convention"] = "cell-centered; lat0/lon0 are the first cell centers";
    j["n_lat"] = field.grid.n_lat();
    j["n_lon"] = field.grid.n_lon();
    j["lat0"] = field.grid.lat0();
    j["dlat"] = field.grid.dlat();
    j["lon0"] = field.grid.lon0();
    j["dlon"] = field.grid.dlon();
    for (const auto& ch : field.channels) j["channels"].push_back({{"name", ch.name}, {"group", ch.group}});
    write_json(j, sidecar_path(path));
  }
}

Field read_field(const std::filesystem::path& path) {
  ByteReader r(path);
  if (r.get_string(8, "magic") != std::string(kFieldMagic, 8)) throw FormatError("magic", "not an FNPGRID1 file");
  const auto h = r.get<std::uint32_t>("header");
  const auto w = r.get<std::uint32_t>("header");
  const auto c = r.get<std::uint32_t>("header");
  const auto lat0 = r.get<double>("header");
  const auto dlat = r.get<double>("header");
  const auto lon0 = r.get<double>("header");
  const auto dlon = r.get<double>("header");
  if (h == 0 || w == 0) throw FormatError("header", "grid dimensions must be positive");

  LatLonGrid grid;
  try {
    grid = LatLonGrid(h, w, lat0, dlat, lon0, dlon);
  } catch (const ConfigError& e) {
    throw FormatError("header", e.what());
  }

  std::vector<ChannelInfo> channels(c);
  for (auto& ch : channels) ch.group = r.get<std::uint32_t>("channel_groups");
  for (auto& ch : channels) {
    const auto len = r.get<std::uint32_t>("channel_names");
    if (len >= kMaxNameLength) throw FormatError("channel_names", "implausible name length");
    ch.name = r.get_string(len, "channel_names");
  }

  const std::size_t n = static_cast<std::size_t>(c) * h * w;
  r.require(n * sizeof(float), "payload");
  std::vector<double> values(n);
  for (std::size_t k = 0; k < n; ++k) {
    const float f = r.get<float>("payload");
    if (!std::isfinite(f)) throw FormatError("payload", "non-finite value at flat index " + std::to_string(k));
    values[k] = f;
  }
  if (r.remaining() != 0) throw FormatError("payload", "unexpected trailing bytes after payload");
  return Field(grid, std::move(channels), std::move(values));
}

void write_obs(const ObservationSet& obs, const std::filesystem::path& path, bool sidecar) {
  obs.validate();
  ByteWriter w;
  w.put_bytes(kObsMagic, 8);
  w.put(static_cast<std::uint32_t>(obs.size()));
  w.put(static_cast<std::uint32_t>(obs.n_channels));
  w.put(obs.source_resolution);
  for (const auto& p : obs.coords) {
    w.put(p.lat);
    w.put(p.lon);
  }
  const std::size_t n = obs.size() * obs.n_channels;
  for (std::size_t k = 0; k < n; ++k)
    w.put(obs.mask[k] ? to_storage(obs.values[k], "observation") : std::numeric_limits<float>::quiet_NaN());
  std::vector<char> bits((n + 7) / 8, 0);
  for (std::size_t k = 0; k < n; ++k)
    if (obs.mask[k]) bits[k / 8] = static_cast<char>(bits[k / 8] | (1 << (k % 8)));
  w.put_bytes(bits.data(), bits.size());
  w.save(path);

  if (sidecar) {
    nlohmann::json j;
    j["format"] = "FNPOBS01";
    j["n_points"] = obs.size();
    j["n_channels"] = obs.n_channels;
    j["source_resolution_deg"] = obs.source_resolution;
    std::size_t present = 0;
    for (auto m : obs.mask) present += m ? 1 : 0;
    j["present_entries"] = present;
    write_json(j, sidecar_path(path));
  }
}

ObservationSet read_obs(const std::filesystem::path& path) {
  ByteReader r(path);
  if (r.get_string(8, "magic") != std::string(kObsMagic, 8)) throw FormatError("magic", "not an FNPOBS01 file");
  ObservationSet obs;
  const auto n_points = r.get<std::uint32_t>("header");
  obs.n_channels = r.get<std::uint32_t>("header");
  obs.source_resolution = r.get<double>("header");
  if (!std::isfinite(obs.source_resolution) || obs.source_resolution < 0.0)
    throw FormatError("header", "invalid source resolution");

  r.require(static_cast<std::size_t>(n_points) * 2 * sizeof(double), "coords");
  obs.coords.resize(n_points);
  for (auto& p : obs.coords) {
    p.lat = r.get<double>("coords");
    p.lon = r.get<double>("coords");
    if (!std::isfinite(p.lat) || !std::isfinite(p.lon)) throw FormatError("coords", "non-finite coordinate");
  }
  const std::size_t n = static_cast<std::size_t>(n_points) * obs.n_channels;
  r.require(n * sizeof(float), "values");
  obs.values.resize(n);
  for (auto& v : obs.values) v = r.get<float>("values");
  const std::size_t n_bytes = (n + 7) / 8;
  const std::string bits = r.get_string(n_bytes, "mask");
  obs.mask.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    obs.mask[k] = (static_cast<unsigned char>(bits[k / 8]) >> (k % 8)) & 1u;
    if (!obs.mask[k]) {
      obs.values[k] = kMissing;
    } else if (!std::isfinite(obs.values[k])) {
      throw FormatError("values", "non-finite value for a present entry at flat index " + std::to_string(k));
    }
  }
  if (r.remaining() != 0) throw FormatError("mask", "unexpected trailing bytes after mask");
  return obs;
}

}  // namespace fnp
