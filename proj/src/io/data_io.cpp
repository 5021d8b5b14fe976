#include "deepself/data_io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "deepself/binary_io.hpp"
#include "deepself/error.hpp"

namespace deepself::data {

namespace fs = std::filesystem;

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "dev") return Split::dev;
  if (name == "test") return Split::test;
  throw ConfigError(fmt::format("split must be one of {{train, dev, test}}, got '{}'", name));
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "train";
}

std::size_t DatasetManifest::class_index(const std::string& label) const {
  const auto it = std::lower_bound(label_names.begin(), label_names.end(), label);
  if (it == label_names.end() || *it != label) throw IndexError("unknown label '" + label + "'");
  return static_cast<std::size_t>(it - label_names.begin());
}

std::vector<std::size_t> DatasetManifest::indices_of(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].split == split) out.push_back(i);
  }
  return out;
}

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool next_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path, bool check_files) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  DatasetManifest m;
  m.source = path;
  std::string line;
  if (!next_line(in, line)) throw ParseError(path.string() + ": empty manifest");
  const auto header = split_cells(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  if (header.size() < 2 || header[0] != "path" || header[1] != "label") {
    throw ParseError(path.string() + ": header must start with path,label (got '" + line + "')");
  }
  for (const auto& h : header) {
    if (h != "path" && h != "label" && h != "split" && h != "fold") {
      throw ParseError(fmt::format("{}: unknown column '{}'", path.string(), h));
    }
  }
  m.has_split = col.contains("split");
  m.has_fold = col.contains("fold");

  const fs::path base = path.parent_path();
  std::set<std::string> labels;
  std::set<fs::path> seen;
  std::size_t row_no = 1;
  while (next_line(in, line)) {
    ++row_no;
    if (trim(line).empty()) continue;
    const auto cells = split_cells(line);
    if (cells.size() != header.size()) {
      throw ParseError(fmt::format("{}: row {} has {} cells, header has {}", path.string(), row_no, cells.size(),
                                   header.size()));
    }
    ManifestRow r;
    if (cells[0].empty() || cells[1].empty()) {
      throw ParseError(fmt::format("{}: row {} has an empty path or label", path.string(), row_no));
    }
    r.path = fs::path(cells[0]).is_absolute() ? fs::path(cells[0]) : base / cells[0];
    r.path = r.path.lexically_normal();
    r.label = cells[1];
    if (m.has_split) {
      try {
        r.split = parse_split(cells[col["split"]]);
      } catch (const ConfigError& e) {
        throw ParseError(fmt::format("{}: row {}: {}", path.string(), row_no, e.what()));
      }
    }
    if (m.has_fold) {
      const auto& f = cells[col["fold"]];
      std::size_t v = 0;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc{} || ptr != f.data() + f.size() || f.empty()) {
        throw ParseError(fmt::format("{}: row {}: fold '{}' is not a non-negative integer", path.string(), row_no, f));
      }
      r.fold = v;
    }
    if (check_files && !fs::exists(r.path)) {
      throw IoError(fmt::format("{}: row {} references missing file {}", path.string(), row_no, r.path.string()));
    }
    if (!seen.insert(r.path).second) {
      spdlog::warn("{}: row {} repeats path {}", path.string(), row_no, r.path.string());
    }
    labels.insert(r.label);
    m.rows.push_back(std::move(r));
  }
  if (m.rows.empty()) throw ParseError(path.string() + ": manifest has no rows");
  m.label_names.assign(labels.begin(), labels.end());
  return m;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "path,label";
  if (manifest.has_split) out << ",split";
  if (manifest.has_fold) out << ",fold";
  out << '\n';
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  for (const auto& r : manifest.rows) {
    auto rel = r.path.lexically_relative(base);
    out << (rel.empty() ? r.path : rel).generic_string() << ',' << r.label;
    if (manifest.has_split) out << ',' << (r.split ? to_string(*r.split) : "");
    if (manifest.has_fold) out << ',' << (r.fold ? std::to_string(*r.fold) : "");
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// WAV

dsp::Signal load_wav_pcm16(const fs::path& path) {
  io::ByteReader r = io::ByteReader::from_file(path);
  const std::string name = path.string();
  if (r.remaining() < 12) throw TruncatedFileError(name + ": too short for a RIFF header");
  const auto riff = r.raw(4);
  r.u32();
  const auto wave = r.raw(4);
  if (riff != "RIFF" || wave != "WAVE") throw BadMagicError(name + ": not a RIFF/WAVE file");

  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  while (r.remaining() >= 8) {
    const auto id = r.raw(4);
    const auto size = r.u32();
    if (id == "fmt ") {
      if (size < 16) throw FormatError(name + ": fmt chunk too short");
      if (r.remaining() < size) throw TruncatedFileError(name + ": truncated fmt chunk");
      std::uint16_t format = r.u16();
      channels = r.u16();
      rate = r.u32();
      r.u32();  // byte rate
      r.u16();  // block align
      bits = r.u16();
      std::size_t consumed = 16;
      if (format == 0xFFFE && size >= 40) {
        r.u16();  // cbSize
        r.u16();  // valid bits
        r.u32();  // channel mask
        format = r.u16();  // first two bytes of the sub-format GUID
        consumed = 26;
      }
      r.raw(size - consumed + (size & 1u));
      if (format != 1) {
        throw UnsupportedFormatError(fmt::format("{}: format code {} is not integer PCM", name, format));
      }
      if (bits != 16) throw UnsupportedBitDepthError(fmt::format("{}: {}-bit samples, only 16-bit PCM is read", name, bits));
      if (channels == 0) throw FormatError(name + ": zero channels");
      if (rate == 0) throw FormatError(name + ": zero sample rate");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError(name + ": data chunk before fmt chunk");
      if (r.remaining() < size) {
        throw TruncatedFileError(fmt::format("{}: data chunk declares {} bytes, {} present", name, size, r.remaining()));
      }
      const std::size_t frame = 2u * channels;
      if (size % frame != 0) throw TruncatedFileError(name + ": data chunk ends mid-frame");
      dsp::Signal s;
      s.sample_rate = rate;
      s.channels.assign(channels, std::vector<double>(size / frame));
      for (std::size_t i = 0; i < size / frame; ++i)
        for (std::size_t c = 0; c < channels; ++c) {
          s.channels[c][i] = static_cast<std::int16_t>(r.u16()) / 32768.0;
        }
      return s;
    } else {
      if (r.remaining() < size) throw TruncatedFileError(name + ": truncated '" + id + "' chunk");
      r.raw(size + (size & 1u));
    }
  }
  throw TruncatedFileError(name + (have_fmt ? ": no data chunk" : ": no fmt chunk"));
}

void write_wav_pcm16(const dsp::Signal& signal, const fs::path& path) {
  signal.validate();
  io::ByteWriter w;
  const auto channels = static_cast<std::uint16_t>(signal.channel_count());
  const auto frames = static_cast<std::uint32_t>(signal.length());
  const std::uint32_t data_bytes = frames * channels * 2u;
  const auto rate = static_cast<std::uint32_t>(std::lround(signal.sample_rate));
  w.raw("RIFF");
  w.u32(36 + data_bytes);
  w.raw("WAVE");
  w.raw("fmt ");
  w.u32(16);
  w.u16(1);
  w.u16(channels);
  w.u32(rate);
  w.u32(rate * channels * 2u);
  w.u16(static_cast<std::uint16_t>(channels * 2u));
  w.u16(16);
  w.raw("data");
  w.u32(data_bytes);
  for (std::size_t i = 0; i < frames; ++i)
    for (const auto& ch : signal.channels) {
      const double v = std::clamp(std::round(ch[i] * 32768.0), -32768.0, 32767.0);
      w.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
    }
  w.save(path);
}

// ---------------------------------------------------------------------------
// CSV series

dsp::Signal load_csv_series(const fs::path& path, double sample_rate) {
  if (!(sample_rate > 0.0)) throw ConfigError(fmt::format("sample rate must be positive, got {}", sample_rate));
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  dsp::Signal s;
  s.sample_rate = sample_rate;
  std::string line;
  std::size_t row = 0;
  while (next_line(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_cells(line);
    if (s.channels.empty()) s.channels.resize(cells.size());
    if (cells.size() != s.channels.size()) {
      throw ParseError(fmt::format("{}: row {} has {} columns, expected {}", path.string(), row, cells.size(),
                                   s.channels.size()));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double v = 0;
      const auto& cell = cells[c];
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw ParseError(fmt::format("{}: row {}, column {}: '{}' is not a finite number", path.string(), row, c + 1,
                                     cell));
      }
      s.channels[c].push_back(v);
    }
  }
  if (s.channels.empty()) throw ParseError(path.string() + ": no samples");
  return s;
}

// ---------------------------------------------------------------------------
// PGM

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string pgm_token(io::ByteReader& r, const std::string& name) {
  std::string tok;
  while (true) {
    if (r.remaining() == 0) {
      if (tok.empty()) throw TruncatedFileError(name + ": truncated PGM header");
      return tok;
    }
    const char c = static_cast<char>(r.u8());
    if (c == '#' && tok.empty()) {
      while (r.remaining() > 0 && static_cast<char>(r.u8()) != '\n') {
      }
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) return tok;
    } else {
      tok += c;
    }
  }
}

std::size_t pgm_number(io::ByteReader& r, const std::string& name, const char* what) {
  const auto tok = pgm_token(r, name);
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
    throw FormatError(fmt::format("{}: {} '{}' is not a non-negative integer", name, what, tok));
  }
  return v;
}

}  // namespace

dsp::FeatureMap load_pgm_image(const fs::path& path) {
  io::ByteReader r = io::ByteReader::from_file(path);
  const std::string name = path.string();
  if (r.remaining() < 2) throw TruncatedFileError(name + ": too short for a PGM header");
  const auto magic = r.raw(2);
  if (magic == "P1" || magic == "P3" || magic == "P4" || magic == "P6" || magic == "P7") {
    throw UnsupportedFormatError(fmt::format("{}: Netpbm type {} is not grayscale PGM (P2/P5)", name, magic));
  }
  if (magic != "P5" && magic != "P2") throw BadMagicError(name + ": not a PGM file");
  const std::size_t width = pgm_number(r, name, "width");
  const std::size_t height = pgm_number(r, name, "height");
  const std::size_t maxval = pgm_number(r, name, "maxval");
  if (width == 0 || height == 0) throw FormatError(fmt::format("{}: empty image {}x{}", name, width, height));
  if (maxval == 0 || maxval > 65535) throw FormatError(fmt::format("{}: maxval {} outside 1..65535", name, maxval));

  dsp::FeatureMap img;
  img.rows = height;
  img.cols = width;
  img.row_axis_kind = dsp::RowAxis::image_row;
  img.seconds_per_frame = 0.0;
  for (std::size_t i = 0; i < height; ++i) img.row_axis.push_back(static_cast<double>(i));
  img.values.resize(width * height);
  const double scale = 1.0 / static_cast<double>(maxval);
  const std::size_t count = width * height;
  if (magic == "P5") {
    const std::size_t bytes_per = maxval > 255 ? 2 : 1;
    if (r.remaining() < count * bytes_per) {
      throw TruncatedFileError(fmt::format("{}: {} pixels declared, {} bytes of raster present", name, count,
                                           r.remaining()));
    }
    for (auto& v : img.values) {
      std::size_t px = r.u8();
      if (bytes_per == 2) px = (px << 8) | r.u8();
      if (px > maxval) throw FormatError(fmt::format("{}: pixel {} exceeds maxval {}", name, px, maxval));
      v = static_cast<double>(px) * scale;
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t px = 0;
      try {
        px = pgm_number(r, name, "pixel");
      } catch (const TruncatedFileError&) {
        throw TruncatedFileError(fmt::format("{}: {} pixels declared, {} present", name, count, i));
      }
      if (px > maxval) throw FormatError(fmt::format("{}: pixel {} exceeds maxval {}", name, px, maxval));
      img.values[i] = static_cast<double>(px) * scale;
    }
  }
  return img;
}

}  // namespace deepself::data
