#pragma once

// Run configuration (INI file + flag overrides) and the five pipeline
// commands behind the `deepself` executable.
//
// Precedence: built-in default < config file < command-line flag.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deepself/data_io.hpp"
#include "deepself/dsp.hpp"
#include "deepself/model.hpp"
#include "deepself/trainer.hpp"

namespace deepself::cli {

namespace fs = std::filesystem;

/// One configurable key: `[section] key` in the file, `--flag` on the
/// command line. Non-empty `choices` is the closed domain.
struct KeySpec {
  std::string section;
  std::string key;
  std::string flag;
  std::string help;
  std::vector<std::string> choices;

  std::string id() const { return section + "." + key; }
};

const std::vector<KeySpec>& known_keys();

/// Raw "section.key" -> text.
using Settings = std::map<std::string, std::string>;

/// Parses an INI file; unknown sections or keys are a ConfigError.
Settings read_ini(const fs::path& path);

enum class ModelType { nn, cnn, rnn, cnn_rnn };
enum class Feature { none, spectrogram, logmel, scalogram };

struct PreprocessConfig {
  bool filter = false;
  double low_hz = 0.5;
  double high_hz = 30.0;
  Feature feature = Feature::none;
  std::size_t window = 0;  // 0: 25 ms at the signal's sample rate
  std::size_t hop = 0;     // 0: 10 ms
  std::size_t n_mels = 64;
  double fmin_hz = 0.0;
  double fmax_hz = 0.0;  // 0: Nyquist
  std::size_t voices = 8;
  double sample_rate = 0.0;     // required for CSV series
  std::size_t fixed_length = 0;  // 0: keep native length
};

struct RunConfig {
  TrainConfig train;
  ModelType model_type = ModelType::nn;
  Activation activation = Activation::relu;
  std::size_t nn_hidden_layers = 1;
  std::size_t nn_hidden_nodes = 64;
  std::vector<std::size_t> cnn_channels{8, 16};
  std::vector<std::size_t> cnn_kernel{5, 5};
  std::vector<std::size_t> cnn_stride{2, 2};
  std::vector<std::size_t> cnn_padding{2, 2};
  CellKind rnn_type = CellKind::gru;
  Direction rnn_direction = Direction::uni;
  std::size_t rnn_hidden_layers = 1;
  std::size_t rnn_hidden_nodes = 32;
  PreprocessConfig preprocess;
  fs::path manifest;
  double dev_fraction = 0.2;
  fs::path output_dir = "deepself_out";
  std::size_t jobs = 1;
};

/// Validates every key against its domain before anything runs.
RunConfig resolve(const Settings& settings);

/// The [preprocess] and [data] settings a checkpoint needs to prepare inputs.
Settings preprocess_settings(const Settings& settings);

/// Reads a sample and applies fixed-length, band-pass filter and feature
/// transform. DSFM inputs are taken as already prepared; PGM images pass
/// through.
dsp::FeatureMap prepare_sample(const fs::path& path, const PreprocessConfig& config);

/// Per-sample tensor shape: images [1 x H x W]; feature=none gives
/// [channels x samples]; other features [1 x rows x cols] (channel maps
/// stacked along rows).
Shape sample_shape_of(const dsp::FeatureMap& map, Feature feature);

/// Dataset over the given manifest rows, classes indexed by `labels`.
Dataset load_dataset(const data::DatasetManifest& manifest, const std::vector<std::size_t>& rows,
                     const std::vector<std::string>& labels, const PreprocessConfig& config, std::size_t jobs);

ModelSpec build_model_spec(const RunConfig& config, const Shape& sample_shape, std::size_t n_classes);

/// Each returns the process exit code; errors are reported on stderr.
int cmd_preprocess(const RunConfig& config, const Settings& settings);
int cmd_train(const RunConfig& config, const Settings& settings, const std::optional<fs::path>& init_checkpoint,
              bool freeze_backbone);
int cmd_evaluate(const RunConfig& config, const std::optional<fs::path>& checkpoint, bool cross_validate);
int cmd_predict(const RunConfig& config, const fs::path& checkpoint);
int cmd_fuse(const std::vector<fs::path>& inputs, FusionMode mode, const fs::path& output_dir);

}  // namespace deepself::cli
