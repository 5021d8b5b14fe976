#pragma once

// Dataset manifests and the three raw input readers: RIFF PCM16 audio,
// numeric CSV series, and grayscale PGM images.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "deepself/dsp.hpp"

namespace deepself::data {

enum class Split { train, dev, test };

Split parse_split(std::string_view name);
std::string_view to_string(Split split);

struct ManifestRow {
  std::filesystem::path path;  // resolved against the manifest's directory
  std::string label;
  std::optional<Split> split;
  std::optional<std::size_t> fold;
};

struct DatasetManifest {
  std::filesystem::path source;
  std::vector<ManifestRow> rows;
  std::vector<std::string> label_names;  // sorted; index = class
  bool has_split = false;
  bool has_fold = false;

  /// IndexError for a label outside the map.
  std::size_t class_index(const std::string& label) const;
  std::vector<std::size_t> indices_of(Split split) const;
};

/// CSV with header `path,label[,split][,fold]` (extra columns in any order
/// after path,label). Relative paths resolve against the manifest directory.
/// check_files=false skips the existence check.
DatasetManifest load_manifest(const std::filesystem::path& path, bool check_files = true);

/// Writes rows with paths relative to the output file's directory when
/// possible.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Samples scaled by 1/32768, channels de-interleaved.
dsp::Signal load_wav_pcm16(const std::filesystem::path& path);
void write_wav_pcm16(const dsp::Signal& signal, const std::filesystem::path& path);

/// One channel per column. No header; blank lines are skipped.
dsp::Signal load_csv_series(const std::filesystem::path& path, double sample_rate);

/// [H x W] map of values / maxval in [0, 1]; seconds_per_frame 0.
dsp::FeatureMap load_pgm_image(const std::filesystem::path& path);

}  // namespace deepself::data
