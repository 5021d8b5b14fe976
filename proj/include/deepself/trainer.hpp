#pragma once

// Mini-batch training with SGD or Adam, dev-UAR model selection, binary
// checkpoints and fine-tuning.
//
// Checkpoint layout (little-endian):
//   "DSLF" u32 version=1
//   u32 n + n bytes ModelSpec JSON
//   u32 count, then per parameter: u16 n + name, u8 rank, u32 dims[rank], f32 data
//   u32 n + n bytes metadata, "key=value\n" lines

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deepself/eval.hpp"
#include "deepself/model.hpp"

namespace deepself {

enum class Optimizer { sgd, adam };

Optimizer parse_optimizer(std::string_view name);
std::string_view to_string(Optimizer optimizer);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  Optimizer optimizer = Optimizer::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  bool shuffle = true;

  /// ConfigError naming the first out-of-domain field.
  void validate() const;
  /// FNV-1a 64 over a canonical text rendering, as 16 hex digits.
  std::string digest() const;
};

/// Uniformly shaped samples stored contiguously.
struct Dataset {
  Shape sample_shape;
  std::vector<float> values;
  std::vector<std::size_t> labels;
  std::vector<std::string> ids;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return shape_numel(sample_shape); }
  void add(std::string id, std::span<const float> sample, std::size_t label);
  /// [indices.size() x sample_shape]
  Tensor batch(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

/// theta <- theta - lr * g
void sgd_step(std::span<float> params, std::span<const float> grads, double lr);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t t = 0;
};

/// One bias-corrected Adam update; state is sized on first use.
void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state, double lr, double beta1,
               double beta2, double epsilon);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_uar = 0.0;
  double dev_uar = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 1-based
  double best_dev_uar = 0.0;

  /// First epoch whose dev UAR reaches `threshold`, if any.
  std::optional<std::size_t> first_epoch_reaching(double threshold) const;
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  Model model;
  TrainHistory history;
};

/// Seeded permutation of 0..n-1 for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch, bool shuffle);

/// Probabilities for every sample, batched, without recording.
PredictionSet predict(const Model& model, const Dataset& data, std::size_t batch_size = 64);

double evaluate_uar(const Model& model, const Dataset& data, std::size_t batch_size = 64);

/// Trains a copy of `model`; returns the snapshot with the best dev UAR
/// (earliest on ties). `trainable` limits updates to those parameter indices.
TrainResult train(const Model& model, const Dataset& train_set, const Dataset& dev_set, const TrainConfig& config,
                  const std::optional<std::vector<std::size_t>>& trainable = std::nullopt);

using CheckpointMetadata = std::map<std::string, std::string>;

struct Checkpoint {
  Model model;
  CheckpointMetadata metadata;
};

inline constexpr std::uint32_t checkpoint_version = 1;

void save_checkpoint(const Model& model, const CheckpointMetadata& metadata, const std::filesystem::path& path);
std::string encode_checkpoint(const Model& model, const CheckpointMetadata& metadata);
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint decode_checkpoint(std::string bytes, const std::string& origin = "checkpoint");

/// Metadata written alongside a trained model.
CheckpointMetadata training_metadata(const TrainHistory& history, const TrainConfig& config,
                                     std::span<const std::string> label_names = {});

/// Continues training from a checkpoint. A different class count swaps in a
/// fresh head seeded by config.seed; freeze_backbone trains the head only.
TrainResult fine_tune(const std::filesystem::path& checkpoint_path, const Dataset& train_set, const Dataset& dev_set,
                      const TrainConfig& config, std::size_t new_n_classes, bool freeze_backbone);
TrainResult fine_tune(Model pretrained, const Dataset& train_set, const Dataset& dev_set, const TrainConfig& config,
                      std::size_t new_n_classes, bool freeze_backbone);

}  // namespace deepself
