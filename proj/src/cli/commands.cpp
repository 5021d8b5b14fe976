#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <iostream>
#include <numeric>
#include <random>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "deepself/cli.hpp"
#include "deepself/crossval.hpp"
#include "deepself/error.hpp"

namespace deepself::cli {

namespace {

std::string lower_extension(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

dsp::FeatureMap stack_rows(const std::vector<dsp::FeatureMap>& maps) {
  dsp::FeatureMap out = maps.front();
  for (std::size_t i = 1; i < maps.size(); ++i) {
    out.rows += maps[i].rows;
    out.values.insert(out.values.end(), maps[i].values.begin(), maps[i].values.end());
    out.row_axis.insert(out.row_axis.end(), maps[i].row_axis.begin(), maps[i].row_axis.end());
  }
  return out;
}

dsp::FeatureMap transform(const dsp::Signal& signal, const PreprocessConfig& c) {
  if (c.feature == Feature::none) return dsp::signal_map(signal);
  const double fs = signal.sample_rate;
  const double fmax = c.fmax_hz > 0 ? c.fmax_hz : fs / 2.0;
  const auto samples = [fs](std::size_t given, double seconds) {
    return given > 0 ? given : std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(seconds * fs)));
  };
  const std::size_t window = samples(c.window, 0.025), hop = samples(c.hop, 0.010);
  std::vector<dsp::FeatureMap> maps;
  for (const auto& ch : signal.channels) {
    const auto mono = dsp::Signal::mono(ch, fs);
    switch (c.feature) {
      case Feature::spectrogram: maps.push_back(dsp::spectrogram(mono, window, hop)); break;
      case Feature::logmel:
        maps.push_back(dsp::log_mel_spectrogram(mono, window, hop, c.n_mels, c.fmin_hz, fmax));
        break;
      case Feature::scalogram:
        maps.push_back(dsp::scalogram(mono, c.voices, c.fmin_hz > 0 ? c.fmin_hz : fmax / 16.0, fmax));
        break;
      case Feature::none: break;
    }
  }
  return stack_rows(maps);
}

std::string row_id(const data::DatasetManifest& m, std::size_t row) {
  const auto base = m.source.parent_path();
  const auto rel = m.rows[row].path.lexically_relative(base.empty() ? fs::path(".") : base);
  return (rel.empty() ? m.rows[row].path : rel).generic_string();
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first
// failure by index.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

Shape model_input_shape(ModelType type, const Shape& sample) {
  if (type == ModelType::nn) return {shape_numel(sample)};
  return sample;
}

std::vector<std::string> split_labels(const std::string& joined) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(joined);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

void print_confusion(const ConfusionMatrix& cm, const std::vector<std::string>& labels) {
  std::cout << "confusion matrix (rows: truth, columns: prediction)\n";
  std::size_t width = 6;
  for (const auto& l : labels) width = std::max(width, l.size() + 1);
  std::cout << fmt::format("{:>{}}", "", width);
  for (std::size_t p = 0; p < cm.n_classes; ++p) std::cout << fmt::format("{:>{}}", labels[p], width);
  std::cout << '\n';
  for (std::size_t t = 0; t < cm.n_classes; ++t) {
    std::cout << fmt::format("{:>{}}", labels[t], width);
    for (std::size_t p = 0; p < cm.n_classes; ++p) std::cout << fmt::format("{:>{}}", cm.at(t, p), width);
    std::cout << '\n';
  }
}

}  // namespace

dsp::FeatureMap prepare_sample(const fs::path& path, const PreprocessConfig& c) {
  const auto ext = lower_extension(path);
  if (ext == ".dsfm") return dsp::read_feature_map(path);
  if (ext == ".pgm") return data::load_pgm_image(path);
  dsp::Signal signal;
  if (ext == ".wav") {
    signal = data::load_wav_pcm16(path);
  } else if (ext == ".csv") {
    if (!(c.sample_rate > 0)) {
      throw ConfigError("[data] sample_rate (--sample-rate) is required for CSV series: " + path.string());
    }
    signal = data::load_csv_series(path, c.sample_rate);
  } else {
    throw UnsupportedFormatError(path.string() + ": unsupported input type (expected .wav, .csv, .pgm or .dsfm)");
  }
  if (c.fixed_length > 0) signal = dsp::fit_length(signal, c.fixed_length);
  if (c.filter) signal = dsp::apply_iir(signal, dsp::design_butterworth_bandpass(c.low_hz, c.high_hz, signal.sample_rate));
  return transform(signal, c);
}

Shape sample_shape_of(const dsp::FeatureMap& map, Feature feature) {
  if (map.seconds_per_frame == 0.0) return {1, map.rows, map.cols};
  if (feature == Feature::none) return {map.rows, map.cols};
  return {1, map.rows, map.cols};
}

Dataset load_dataset(const data::DatasetManifest& manifest, const std::vector<std::size_t>& rows,
                     const std::vector<std::string>& labels, const PreprocessConfig& config, std::size_t jobs) {
  std::vector<dsp::FeatureMap> maps(rows.size());
  parallel_for(rows.size(), jobs, [&](std::size_t i) { maps[i] = prepare_sample(manifest.rows[rows[i]].path, config); });
  Dataset out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = manifest.rows[rows[i]];
    const auto shape = sample_shape_of(maps[i], config.feature);
    if (i == 0) out.sample_shape = shape;
    if (shape != out.sample_shape) {
      throw ShapeError(fmt::format("{} prepares to {} but earlier samples are {}; set [data] fixed_length",
                                   row.path.string(), shape_str(shape), shape_str(out.sample_shape)));
    }
    const auto it = std::find(labels.begin(), labels.end(), row.label);
    if (it == labels.end()) {
      throw IndexError(fmt::format("{}: label '{}' is not one of the {} model classes", row.path.string(), row.label,
                                   labels.size()));
    }
    const std::vector<float> values(maps[i].values.begin(), maps[i].values.end());
    out.add(row_id(manifest, rows[i]), values, static_cast<std::size_t>(it - labels.begin()));
  }
  return out;
}

ModelSpec build_model_spec(const RunConfig& c, const Shape& sample_shape, std::size_t n_classes) {
  ModelSpec spec;
  spec.input_shape = model_input_shape(c.model_type, sample_shape);
  spec.n_classes = n_classes;
  spec.activation = c.activation;
  spec.seed = c.train.seed;
  if (c.model_type == ModelType::cnn || c.model_type == ModelType::cnn_rnn) {
    const std::size_t rank = sample_shape.size() - 1;
    for (std::size_t l = 0; l < c.cnn_channels.size(); ++l) {
      spec.layers.push_back(ConvLayer{c.cnn_channels[l], std::vector<std::size_t>(rank, c.cnn_kernel[l]),
                                      std::vector<std::size_t>(rank, c.cnn_stride[l]),
                                      std::vector<std::size_t>(rank, c.cnn_padding[l])});
    }
  }
  if (c.model_type == ModelType::rnn || c.model_type == ModelType::cnn_rnn) {
    spec.layers.push_back(RecurrentLayer{c.rnn_type, c.rnn_hidden_nodes, c.rnn_hidden_layers, c.rnn_direction});
  }
  if (c.model_type == ModelType::nn || c.model_type == ModelType::cnn) {
    for (std::size_t l = 0; l < c.nn_hidden_layers; ++l) spec.layers.push_back(DenseLayer{c.nn_hidden_nodes});
  }
  spec.layers.push_back(DenseLayer{n_classes});
  plan_shapes(spec);
  return spec;
}

int cmd_preprocess(const RunConfig& config, const Settings&) {
  if (config.manifest.empty()) throw ConfigError("[data] manifest (--manifest) is required");
  auto manifest = data::load_manifest(config.manifest);
  const auto dir = config.output_dir / "features";
  fs::create_directories(dir);
  std::vector<fs::path> outputs(manifest.rows.size());
  parallel_for(manifest.rows.size(), config.jobs, [&](std::size_t i) {
    const auto map = prepare_sample(manifest.rows[i].path, config.preprocess);
    outputs[i] = dir / fmt::format("{:05d}_{}.dsfm", i, manifest.rows[i].path.stem().string());
    dsp::write_feature_map(map, outputs[i]);
    spdlog::debug("{} -> {} ({}x{})", manifest.rows[i].path.string(), outputs[i].string(), map.rows, map.cols);
  });
  for (std::size_t i = 0; i < outputs.size(); ++i) manifest.rows[i].path = outputs[i];
  const auto derived = config.output_dir / "features.csv";
  data::write_manifest(manifest, derived);
  std::cout << fmt::format("wrote {} feature maps and {}\n", outputs.size(), derived.string());
  return 0;
}

int cmd_train(const RunConfig& config, const Settings& settings, const std::optional<fs::path>& init_checkpoint,
              bool freeze_backbone) {
  if (config.manifest.empty()) throw ConfigError("[data] manifest (--manifest) is required");
  const auto manifest = data::load_manifest(config.manifest);
  std::vector<std::size_t> train_rows, dev_rows;
  if (manifest.has_split) {
    train_rows = manifest.indices_of(data::Split::train);
    dev_rows = manifest.indices_of(data::Split::dev);
    if (train_rows.empty() || dev_rows.empty()) {
      throw ConfigError("manifest split column needs both train and dev rows");
    }
  } else {
    std::vector<std::size_t> order(manifest.rows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(config.train.seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_dev = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(config.dev_fraction * static_cast<double>(order.size()))), 1,
        order.size() - 1);
    dev_rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_dev));
    train_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_dev), order.end());
    std::sort(dev_rows.begin(), dev_rows.end());
    std::sort(train_rows.begin(), train_rows.end());
  }
  const auto& labels = manifest.label_names;
  auto train_set = load_dataset(manifest, train_rows, labels, config.preprocess, config.jobs);
  auto dev_set = load_dataset(manifest, dev_rows, labels, config.preprocess, config.jobs);
  train_set.sample_shape = dev_set.sample_shape = model_input_shape(config.model_type, train_set.sample_shape);
  spdlog::info("training on {} samples, dev {} samples, input {}", train_set.size(), dev_set.size(),
               shape_str(train_set.sample_shape));

  std::optional<TrainResult> result;
  if (init_checkpoint) {
    result.emplace(fine_tune(*init_checkpoint, train_set, dev_set, config.train, labels.size(), freeze_backbone));
  } else {
    const auto spec = build_model_spec(config, train_set.sample_shape, labels.size());
    for (const auto& p : plan_shapes(spec).layers) {
      spdlog::debug("{} {} -> {}", describe(p.layer), shape_str(p.input), shape_str(p.output));
    }
    result.emplace(train(Model::init(spec), train_set, dev_set, config.train));
  }
  for (const auto& e : result->history.epochs) {
    spdlog::info("epoch {:>3}  loss {:.4f}  train UAR {:6.2f}  dev UAR {:6.2f}", e.epoch, e.train_loss, e.train_uar,
                 e.dev_uar);
  }
  fs::create_directories(config.output_dir);
  auto meta = training_metadata(result->history, config.train, labels);
  for (const auto& [k, v] : preprocess_settings(settings)) meta[k] = v;
  meta["model.type"] = settings.contains("model.type") ? settings.at("model.type") : "nn";
  save_checkpoint(result->model, meta, config.output_dir / "best.ckpt");
  result->history.write_csv(config.output_dir / "history.csv");
  std::cout << fmt::format("best dev UAR {:.2f}% at epoch {}\n", result->history.best_dev_uar,
                           result->history.best_epoch);
  return 0;
}

namespace {

struct LoadedCheckpoint {
  Checkpoint checkpoint;
  std::vector<std::string> labels;
  PreprocessConfig preprocess;
  ModelType type;
};

LoadedCheckpoint open_checkpoint(const fs::path& path, const data::DatasetManifest& manifest) {
  auto ck = load_checkpoint(path);
  Settings pre;
  for (const auto& [k, v] : ck.metadata) {
    if (k.rfind("preprocess.", 0) == 0 || k.rfind("data.", 0) == 0 || k == "model.type") pre[k] = v;
  }
  const auto resolved = resolve(pre);
  std::vector<std::string> labels;
  if (ck.metadata.contains("labels")) {
    labels = split_labels(ck.metadata.at("labels"));
  } else {
    labels = manifest.label_names;
  }
  if (labels.size() != ck.model.spec().n_classes) {
    throw IntegrityError(fmt::format("{}: {} label names for {} classes", path.string(), labels.size(),
                                     ck.model.spec().n_classes));
  }
  return {std::move(ck), std::move(labels), resolved.preprocess, resolved.model_type};
}

Dataset dataset_for(const LoadedCheckpoint& lc, const data::DatasetManifest& manifest, std::size_t jobs) {
  std::vector<std::size_t> rows(manifest.rows.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  auto data = load_dataset(manifest, rows, lc.labels, lc.preprocess, jobs);
  data.sample_shape = model_input_shape(lc.type, data.sample_shape);
  if (data.sample_shape != lc.checkpoint.model.spec().input_shape) {
    throw ShapeError(fmt::format("inputs prepare to {} but the checkpoint expects {}", shape_str(data.sample_shape),
                                 shape_str(lc.checkpoint.model.spec().input_shape)));
  }
  return data;
}

}  // namespace

int cmd_evaluate(const RunConfig& config, const std::optional<fs::path>& checkpoint, bool cross_validate) {
  if (config.manifest.empty()) throw ConfigError("[data] manifest (--manifest) is required");
  const auto manifest = data::load_manifest(config.manifest);
  if (cross_validate) {
    if (!manifest.has_fold) throw ConfigError(config.manifest.string() + ": --cv needs a fold column");
    std::vector<std::size_t> rows(manifest.rows.size()), folds;
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    for (const auto& r : manifest.rows) folds.push_back(*r.fold);
    auto data = load_dataset(manifest, rows, manifest.label_names, config.preprocess, config.jobs);
    data.sample_shape = model_input_shape(config.model_type, data.sample_shape);
    const auto spec = build_model_spec(config, data.sample_shape, manifest.label_names.size());
    const auto cv = kfold_cross_validate(data, folds, spec, config.train, config.jobs);
    fs::create_directories(config.output_dir);
    for (const auto& f : cv.folds) std::cout << fmt::format("fold {}: test UAR {:.2f}%\n", f.fold, f.test_uar);
    std::cout << fmt::format("mean UAR {:.2f}%\n", cv.mean_uar);
    write_fold_report(cv.folds, cv.mean_uar, config.output_dir / "folds.csv");
    write_predictions(cv.test_predictions, config.output_dir / "cv_predictions.csv");
    return 0;
  }
  if (!checkpoint) throw ConfigError("evaluate needs --checkpoint (or --cv)");
  const auto lc = open_checkpoint(*checkpoint, manifest);
  const auto data = dataset_for(lc, manifest, config.jobs);
  const auto preds = predict(lc.checkpoint.model, data);
  const auto cm = confusion_matrix(data.labels, preds.labels(), lc.labels.size());
  print_confusion(cm, lc.labels);
  std::cout << fmt::format("UAR {:.2f}%\n", uar(cm));
  return 0;
}

int cmd_predict(const RunConfig& config, const fs::path& checkpoint) {
  if (config.manifest.empty()) throw ConfigError("[data] manifest (--manifest) is required");
  const auto manifest = data::load_manifest(config.manifest);
  const auto lc = open_checkpoint(checkpoint, manifest);
  // Labels in the manifest are informational here; unknown names are fine.
  data::DatasetManifest known = manifest;
  for (auto& r : known.rows) {
    if (std::find(lc.labels.begin(), lc.labels.end(), r.label) == lc.labels.end()) r.label = lc.labels.front();
  }
  const auto data = dataset_for(lc, known, config.jobs);
  fs::create_directories(config.output_dir);
  const auto out = config.output_dir / "predictions.csv";
  write_predictions(predict(lc.checkpoint.model, data), out);
  std::cout << fmt::format("wrote {} predictions to {}\n", data.size(), out.string());
  return 0;
}

int cmd_fuse(const std::vector<fs::path>& inputs, FusionMode mode, const fs::path& output_dir) {
  if (inputs.empty()) throw ConfigError("fuse needs at least one predictions file");
  std::vector<PredictionSet> sets;
  for (const auto& p : inputs) sets.push_back(read_predictions(p));
  const auto fused = fuse_predictions(sets, mode);
  fs::create_directories(output_dir);
  const auto out = output_dir / "fused.csv";
  write_predictions(fused, out);
  std::cout << fmt::format("fused {} prediction sets ({}) into {}\n", sets.size(), to_string(mode), out.string());
  return 0;
}

}  // namespace deepself::cli
