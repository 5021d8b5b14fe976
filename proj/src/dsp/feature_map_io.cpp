#include <cmath>

#include <fmt/format.h>

#include "deepself/binary_io.hpp"
#include "deepself/dsp.hpp"
#include "deepself/error.hpp"

namespace deepself::dsp {

namespace {
constexpr std::string_view kMagic = "DSFM";
constexpr std::uint32_t kVersion = 1;
}  // namespace

void write_feature_map(const FeatureMap& map, const std::filesystem::path& path) {
  if (map.values.size() != map.rows * map.cols || map.row_axis.size() != map.rows) {
    throw ContractError(fmt::format("feature map {}x{} has {} values and {} axis entries", map.rows, map.cols,
                                    map.values.size(), map.row_axis.size()));
  }
  io::ByteWriter w;
  w.raw(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(map.rows));
  w.u32(static_cast<std::uint32_t>(map.cols));
  w.f64(map.seconds_per_frame);
  for (double v : map.row_axis) w.f64(v);
  for (double v : map.values) w.f32(static_cast<float>(v));
  w.save(path);
}

FeatureMap read_feature_map(const std::filesystem::path& path) {
  auto r = io::ByteReader::from_file(path);
  if (r.raw(4) != kMagic) throw BadMagicError(path.string() + ": not a DSFM feature map (bad magic)");
  const auto version = r.u32();
  if (version != kVersion) {
    throw UnsupportedVersionError(fmt::format("{}: unsupported DSFM version {}", path.string(), version));
  }
  FeatureMap map;
  map.rows = r.u32();
  map.cols = r.u32();
  if (map.rows == 0 || map.cols == 0) throw FormatError(path.string() + ": empty feature map");
  map.seconds_per_frame = r.f64();
  map.row_axis.resize(map.rows);
  for (auto& v : map.row_axis) v = r.f64();
  map.values.resize(map.rows * map.cols);
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    const float v = r.f32();
    if (!std::isfinite(v)) throw NumericError(fmt::format("{}: non-finite value at index {}", path.string(), i));
    map.values[i] = v;
  }
  if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes after feature map");
  map.row_axis_kind = map.seconds_per_frame > 0 ? RowAxis::frequency_hz : RowAxis::image_row;
  return map;
}

}  // namespace deepself::dsp
