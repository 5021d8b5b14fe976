#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "deepself/cli.hpp"
#include "deepself/error.hpp"

namespace deepself::cli {

const std::vector<KeySpec>& known_keys() {
  static const std::vector<KeySpec> keys{
      {"general", "learning_rate", "learning-rate", "learning rate (positive real)", {}},
      {"general", "batch_size", "batch-size", "mini-batch size (positive integer)", {}},
      {"general", "epochs", "epochs", "number of epochs (positive integer)", {}},
      {"general", "optimizer", "optimizer", "optimiser", {"sgd", "adam"}},
      {"model", "type", "model", "network structure", {"nn", "cnn", "rnn", "cnn+rnn"}},
      {"model", "activation", "activation", "hidden-layer activation", {"relu", "sigmoid", "tanh"}},
      {"nn", "hidden_layers", "nn-hidden-layers", "fully connected hidden layers (positive integer)", {}},
      {"nn", "hidden_nodes", "nn-hidden-nodes", "nodes per fully connected hidden layer (positive integer)", {}},
      {"cnn", "channels", "cnn-channels", "output channels per conv layer, comma list", {}},
      {"cnn", "kernel", "cnn-kernel", "kernel size per conv layer, comma list", {}},
      {"cnn", "stride", "cnn-stride", "stride per conv layer, comma list", {}},
      {"cnn", "padding", "cnn-padding", "zero padding per conv layer, comma list", {}},
      {"rnn", "type", "rnn-type", "recurrent cell", {"rnn", "lstm", "gru"}},
      {"rnn", "direction", "rnn-direction", "recurrence direction", {"uni", "bi"}},
      {"rnn", "hidden_layers", "rnn-hidden-layers", "stacked recurrent layers (positive integer)", {}},
      {"rnn", "hidden_nodes", "rnn-hidden-nodes", "hidden state size (positive integer)", {}},
      {"preprocess", "filter", "filter", "Butterworth band-pass before features", {"on", "off"}},
      {"preprocess", "low_hz", "low-hz", "band-pass lower cutoff in Hz", {}},
      {"preprocess", "high_hz", "high-hz", "band-pass upper cutoff in Hz", {}},
      {"preprocess", "feature", "feature", "feature map", {"none", "spectrogram", "logmel", "scalogram"}},
      {"preprocess", "window", "window", "STFT window length in samples (0 = 25 ms)", {}},
      {"preprocess", "hop", "hop", "STFT hop in samples (0 = 10 ms)", {}},
      {"preprocess", "n_mels", "n-mels", "mel bands", {}},
      {"preprocess", "fmin_hz", "fmin-hz", "lowest mel/scalogram frequency in Hz", {}},
      {"preprocess", "fmax_hz", "fmax-hz", "highest mel/scalogram frequency in Hz (0 = Nyquist)", {}},
      {"preprocess", "voices", "voices", "scalogram voices per octave", {}},
      {"data", "manifest", "manifest", "dataset manifest CSV", {}},
      {"data", "sample_rate", "sample-rate", "sample rate of CSV series in Hz", {}},
      {"data", "fixed_length", "fixed-length", "crop/zero-pad raw signals to this many samples (0 = off)", {}},
      {"data", "dev_fraction", "dev-fraction", "dev share when the manifest has no split column", {}},
      {"run", "seed", "seed", "seed for every random choice", {}},
      {"run", "output_dir", "output-dir", "directory that receives all outputs", {}},
      {"run", "jobs", "jobs", "worker threads for pre-processing and cross-validation", {}},
  };
  return keys;
}

Settings read_ini(const fs::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.message()));
  }
  Settings out;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError(fmt::format("{}: key '{}' outside any section", path.string(), section));
    }
    for (const auto& [key, value] : body) {
      const auto id = section + "." + key;
      const bool known =
          std::any_of(known_keys().begin(), known_keys().end(), [&](const KeySpec& k) { return k.id() == id; });
      if (!known) throw ConfigError(fmt::format("{}: unknown key [{}] {}", path.string(), section, key));
      out[id] = value.data();
    }
  }
  return out;
}

namespace {

const KeySpec& spec_of(const std::string& id) {
  for (const auto& k : known_keys()) {
    if (k.id() == id) return k;
  }
  throw ContractError("no such key " + id);
}

std::string where(const std::string& id) {
  const auto& k = spec_of(id);
  return fmt::format("[{}] {} (--{})", k.section, k.key, k.flag);
}

std::string choice(const Settings& s, const std::string& id, const std::string& fallback) {
  const auto it = s.find(id);
  const std::string v = it == s.end() ? fallback : it->second;
  const auto& k = spec_of(id);
  if (std::find(k.choices.begin(), k.choices.end(), v) == k.choices.end()) {
    throw ConfigError(fmt::format("{} must be one of {{{}}}, got '{}'", where(id), fmt::join(k.choices, ", "), v));
  }
  return v;
}

std::size_t count(const Settings& s, const std::string& id, std::size_t fallback, bool allow_zero = false) {
  const auto it = s.find(id);
  if (it == s.end()) return fallback;
  const auto& t = it->second;
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size() || (!allow_zero && v == 0)) {
    throw ConfigError(fmt::format("{} must be a {} integer, got '{}'", where(id), allow_zero ? "non-negative" : "positive", t));
  }
  return v;
}

double real(const Settings& s, const std::string& id, double fallback, bool allow_zero) {
  const auto it = s.find(id);
  if (it == s.end()) return fallback;
  const auto& t = it->second;
  double v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size() || !std::isfinite(v) || v < 0 ||
      (!allow_zero && v == 0)) {
    throw ConfigError(fmt::format("{} must be a {} real, got '{}'", where(id), allow_zero ? "non-negative" : "positive", t));
  }
  return v;
}

std::vector<std::size_t> counts(const Settings& s, const std::string& id, std::vector<std::size_t> fallback,
                                bool allow_zero) {
  const auto it = s.find(id);
  if (it == s.end()) return fallback;
  std::vector<std::size_t> out;
  std::string cell;
  std::stringstream ss(it->second);
  while (std::getline(ss, cell, ',')) {
    cell.erase(0, cell.find_first_not_of(" \t"));
    cell.erase(cell.find_last_not_of(" \t") + 1);
    Settings one{{id, cell}};
    out.push_back(count(one, id, 0, allow_zero));
  }
  if (out.empty()) throw ConfigError(fmt::format("{} needs at least one value", where(id)));
  return out;
}

std::string text(const Settings& s, const std::string& id, const std::string& fallback) {
  const auto it = s.find(id);
  return it == s.end() ? fallback : it->second;
}

}  // namespace

RunConfig resolve(const Settings& s) {
  for (const auto& [id, value] : s) spec_of(id);
  RunConfig c;
  c.train.learning_rate = real(s, "general.learning_rate", 1e-3, false);
  c.train.batch_size = count(s, "general.batch_size", 32);
  c.train.epochs = count(s, "general.epochs", 10);
  c.train.optimizer = parse_optimizer(choice(s, "general.optimizer", "adam"));

  const auto type = choice(s, "model.type", "nn");
  c.model_type = type == "nn" ? ModelType::nn : type == "cnn" ? ModelType::cnn : type == "rnn" ? ModelType::rnn
                                                                                               : ModelType::cnn_rnn;
  c.activation = parse_activation(choice(s, "model.activation", "relu"));

  c.nn_hidden_layers = count(s, "nn.hidden_layers", c.nn_hidden_layers);
  c.nn_hidden_nodes = count(s, "nn.hidden_nodes", c.nn_hidden_nodes);

  c.cnn_channels = counts(s, "cnn.channels", c.cnn_channels, false);
  c.cnn_kernel = counts(s, "cnn.kernel", c.cnn_kernel, false);
  c.cnn_stride = counts(s, "cnn.stride", c.cnn_stride, false);
  c.cnn_padding = counts(s, "cnn.padding", c.cnn_padding, true);
  const std::size_t n_conv = c.cnn_channels.size();
  if (c.cnn_kernel.size() != n_conv || c.cnn_stride.size() != n_conv || c.cnn_padding.size() != n_conv) {
    throw ConfigError(fmt::format("[cnn] channels, kernel, stride and padding need one entry per layer, got {}, {}, {}, {}",
                                  n_conv, c.cnn_kernel.size(), c.cnn_stride.size(), c.cnn_padding.size()));
  }

  c.rnn_type = parse_cell_kind(choice(s, "rnn.type", "gru"));
  c.rnn_direction = parse_direction(choice(s, "rnn.direction", "uni"));
  c.rnn_hidden_layers = count(s, "rnn.hidden_layers", c.rnn_hidden_layers);
  c.rnn_hidden_nodes = count(s, "rnn.hidden_nodes", c.rnn_hidden_nodes);

  auto& p = c.preprocess;
  p.filter = choice(s, "preprocess.filter", "off") == "on";
  p.low_hz = real(s, "preprocess.low_hz", p.low_hz, false);
  p.high_hz = real(s, "preprocess.high_hz", p.high_hz, false);
  if (p.filter && !(p.low_hz < p.high_hz)) {
    throw ConfigError(fmt::format("low must be < high (low={} Hz, high={} Hz)", p.low_hz, p.high_hz));
  }
  const auto feature = choice(s, "preprocess.feature", "none");
  p.feature = feature == "none"          ? Feature::none
              : feature == "spectrogram" ? Feature::spectrogram
              : feature == "logmel"      ? Feature::logmel
                                         : Feature::scalogram;
  p.window = count(s, "preprocess.window", p.window, true);
  p.hop = count(s, "preprocess.hop", p.hop, true);
  p.n_mels = count(s, "preprocess.n_mels", p.n_mels);
  p.fmin_hz = real(s, "preprocess.fmin_hz", p.fmin_hz, true);
  p.fmax_hz = real(s, "preprocess.fmax_hz", p.fmax_hz, true);
  p.voices = count(s, "preprocess.voices", p.voices);
  p.sample_rate = real(s, "data.sample_rate", 0.0, true);
  p.fixed_length = count(s, "data.fixed_length", 0, true);

  c.manifest = text(s, "data.manifest", "");
  c.dev_fraction = real(s, "data.dev_fraction", c.dev_fraction, false);
  if (c.dev_fraction >= 1.0) throw ConfigError(fmt::format("{} must be below 1, got {}", where("data.dev_fraction"), c.dev_fraction));

  c.train.seed = count(s, "run.seed", 0, true);
  c.output_dir = text(s, "run.output_dir", c.output_dir.string());
  if (c.output_dir.empty()) throw ConfigError(where("run.output_dir") + " must not be empty");
  c.jobs = count(s, "run.jobs", 1);
  c.train.validate();
  return c;
}

Settings preprocess_settings(const Settings& s) {
  Settings out;
  for (const auto& [id, v] : s) {
    if (id.rfind("preprocess.", 0) == 0 || id == "data.sample_rate" || id == "data.fixed_length") out[id] = v;
  }
  return out;
}

}  // namespace deepself::cli
