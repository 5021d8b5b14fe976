#include "deepself/crossval.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <numeric>
#include <optional>
#include <thread>

#include <fmt/format.h>

#include "deepself/error.hpp"

namespace deepself {

std::vector<FoldSplit> fold_splits(std::span<const std::size_t> folds) {
  if (folds.empty()) throw ContractError("cross-validation needs at least one instance");
  const std::size_t k = *std::max_element(folds.begin(), folds.end()) + 1;
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < folds.size(); ++i) members[folds[i]].push_back(i);
  for (std::size_t f = 0; f < k; ++f) {
    if (members[f].empty()) throw ConfigError(fmt::format("fold {} has no instances", f));
  }
  if (k < 2) throw ConfigError("cross-validation needs at least 2 folds");

  std::vector<FoldSplit> out;
  for (std::size_t f = 0; f < k; ++f) {
    FoldSplit s;
    s.fold = f;
    s.test = members[f];
    const std::size_t dev = (f + 1) % k;
    s.dev = members[dev];
    for (std::size_t g = 0; g < k; ++g) {
      if (g == f || (g == dev && k > 2)) continue;
      s.train.insert(s.train.end(), members[g].begin(), members[g].end());
    }
    std::sort(s.train.begin(), s.train.end());
    out.push_back(std::move(s));
  }
  return out;
}

CrossValidationResult kfold_cross_validate(const Dataset& data, std::span<const std::size_t> folds,
                                           const ModelSpec& spec, const TrainConfig& config, std::size_t jobs) {
  if (folds.size() != data.size()) {
    throw ContractError(fmt::format("{} fold ids for {} instances", folds.size(), data.size()));
  }
  config.validate();
  const auto splits = fold_splits(folds);

  std::vector<std::optional<PredictionSet>> per_fold(splits.size());
  std::vector<double> uars(splits.size(), 0.0);
  std::vector<std::exception_ptr> errors(splits.size());
  std::atomic<std::size_t> next{0};

  const auto worker = [&] {
    for (std::size_t i = next++; i < splits.size(); i = next++) {
      try {
        const auto& s = splits[i];
        ModelSpec fold_spec = spec;
        fold_spec.seed = spec.seed + s.fold;
        TrainConfig fold_config = config;
        fold_config.seed = config.seed + s.fold;
        const auto test = data.subset(s.test);
        auto result = train(Model::init(fold_spec), data.subset(s.train), data.subset(s.dev), fold_config);
        per_fold[i] = predict(result.model, test);
        uars[i] = uar(confusion_matrix(test.labels, per_fold[i]->labels(), spec.n_classes));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, splits.size());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  CrossValidationResult out;
  out.test_predictions.n_classes = spec.n_classes;
  std::vector<const Prediction*> by_instance(data.size(), nullptr);
  for (std::size_t i = 0; i < splits.size(); ++i) {
    out.folds.push_back({splits[i].fold, uars[i]});
    for (std::size_t j = 0; j < splits[i].test.size(); ++j) by_instance[splits[i].test[j]] = &per_fold[i]->rows[j];
  }
  for (const auto* p : by_instance) out.test_predictions.rows.push_back(*p);
  out.mean_uar = std::accumulate(uars.begin(), uars.end(), 0.0) / static_cast<double>(uars.size());
  return out;
}

}  // namespace deepself
