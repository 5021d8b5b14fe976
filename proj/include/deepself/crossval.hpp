#pragma once

// Cross-validation over distributor-assigned folds.

#include <cstddef>
#include <span>
#include <vector>

#include "deepself/eval.hpp"
#include "deepself/model.hpp"
#include "deepself/trainer.hpp"

namespace deepself {

struct FoldSplit {
  std::size_t fold = 0;
  std::vector<std::size_t> test;
  std::vector<std::size_t> dev;
  std::vector<std::size_t> train;
};

/// test = fold f, dev = fold (f+1) mod K, train = the rest. With K = 2 the
/// dev fold doubles as the training fold. Fold ids must cover 0..K-1.
std::vector<FoldSplit> fold_splits(std::span<const std::size_t> folds);

struct CrossValidationResult {
  std::vector<FoldResult> folds;
  double mean_uar = 0.0;
  PredictionSet test_predictions;  // every instance once, in dataset order
};

/// Fold f trains a fresh model from spec with seed + f (both init and
/// shuffling). Folds run on up to `jobs` threads; results do not depend on it.
CrossValidationResult kfold_cross_validate(const Dataset& data, std::span<const std::size_t> folds,
                                           const ModelSpec& spec, const TrainConfig& config, std::size_t jobs = 1);

}  // namespace deepself
