#pragma once

// Confusion matrices, unweighted average recall, prediction sets and late
// fusion.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace deepself {

struct ConfusionMatrix {
  std::size_t n_classes = 0;
  std::vector<std::size_t> counts;  // row-major [truth][pred]

  std::size_t at(std::size_t truth, std::size_t pred) const { return counts[truth * n_classes + pred]; }
  std::size_t row_sum(std::size_t truth) const;
  std::size_t total() const;
};

ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth, std::span<const std::size_t> pred,
                                 std::size_t n_classes);

/// Percent. Classes with no true instances are left out of the mean;
/// UndefinedMetricError when every class is empty.
double uar(const ConfusionMatrix& cm);

/// Index of the largest value, lowest index on ties.
std::size_t argmax(std::span<const double> values);

struct Prediction {
  std::string id;
  std::vector<double> probabilities;
  std::size_t label = 0;
};

struct PredictionSet {
  std::size_t n_classes = 0;
  std::vector<Prediction> rows;

  std::vector<std::size_t> labels() const;
  /// Appends a row, labelling it by argmax.
  void add(std::string id, std::vector<double> probabilities);
};

enum class FusionMode { mean, vote };

FusionMode parse_fusion_mode(std::string_view name);
std::string_view to_string(FusionMode mode);

/// Sets must agree on ids (in order) and class count.
PredictionSet fuse_predictions(std::span<const PredictionSet> sets, FusionMode mode);

/// `id,label,prob_0,...,prob_{C-1}`.
void write_predictions(const PredictionSet& set, const std::filesystem::path& path);
PredictionSet read_predictions(const std::filesystem::path& path);

struct FoldResult {
  std::size_t fold = 0;
  double test_uar = 0.0;
};

/// `fold,test_uar` rows followed by `mean,<value>`.
void write_fold_report(std::span<const FoldResult> folds, double mean, const std::filesystem::path& path);

}  // namespace deepself
