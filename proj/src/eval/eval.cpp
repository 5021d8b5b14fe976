#include "deepself/eval.hpp"

#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "deepself/error.hpp"

namespace deepself {

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < n_classes; ++p) s += at(truth, p);
  return s;
}

std::size_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth, std::span<const std::size_t> pred,
                                 std::size_t n_classes) {
  if (truth.size() != pred.size()) {
    throw ContractError(fmt::format("confusion matrix: {} true labels vs {} predictions", truth.size(), pred.size()));
  }
  if (truth.empty()) throw ContractError("confusion matrix: no instances");
  ConfusionMatrix cm{n_classes, std::vector<std::size_t>(n_classes * n_classes, 0)};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= n_classes || pred[i] >= n_classes) {
      throw IndexError(fmt::format("confusion matrix: instance {} has label {}/{} outside {} classes", i, truth[i],
                                   pred[i], n_classes));
    }
    ++cm.counts[truth[i] * n_classes + pred[i]];
  }
  return cm;
}

double uar(const ConfusionMatrix& cm) {
  double total = 0.0;
  std::size_t included = 0;
  for (std::size_t c = 0; c < cm.n_classes; ++c) {
    const std::size_t n = cm.row_sum(c);
    if (n == 0) continue;
    total += static_cast<double>(cm.at(c, c)) / static_cast<double>(n);
    ++included;
  }
  if (included == 0) throw UndefinedMetricError("UAR undefined: no class has a true instance");
  return 100.0 * total / static_cast<double>(included);
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ContractError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<std::size_t> PredictionSet::labels() const {
  std::vector<std::size_t> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.label);
  return out;
}

void PredictionSet::add(std::string id, std::vector<double> probabilities) {
  if (n_classes == 0) n_classes = probabilities.size();
  if (probabilities.size() != n_classes) {
    throw ShapeError(fmt::format("prediction '{}' has {} probabilities, set has {} classes", id,
                                 probabilities.size(), n_classes));
  }
  const std::size_t label = argmax(probabilities);
  rows.push_back({std::move(id), std::move(probabilities), label});
}

FusionMode parse_fusion_mode(std::string_view name) {
  if (name == "mean") return FusionMode::mean;
  if (name == "vote") return FusionMode::vote;
  throw ConfigError(fmt::format("fusion mode must be one of {{mean, vote}}, got '{}'", name));
}

std::string_view to_string(FusionMode mode) { return mode == FusionMode::mean ? "mean" : "vote"; }

PredictionSet fuse_predictions(std::span<const PredictionSet> sets, FusionMode mode) {
  if (sets.empty()) throw ContractError("fusion needs at least one prediction set");
  const auto& first = sets.front();
  for (std::size_t s = 1; s < sets.size(); ++s) {
    if (sets[s].n_classes != first.n_classes) {
      throw ContractError(fmt::format("prediction set {} has {} classes, set 0 has {}", s, sets[s].n_classes,
                                      first.n_classes));
    }
    if (sets[s].rows.size() != first.rows.size()) {
      throw ContractError(fmt::format("prediction set {} has {} rows, set 0 has {}", s, sets[s].rows.size(),
                                      first.rows.size()));
    }
    for (std::size_t i = 0; i < first.rows.size(); ++i) {
      if (sets[s].rows[i].id != first.rows[i].id) {
        throw ContractError(fmt::format("prediction set {} row {} has id '{}', set 0 has '{}'", s, i,
                                        sets[s].rows[i].id, first.rows[i].id));
      }
    }
  }
  if (sets.size() == 1) return first;

  PredictionSet out;
  out.n_classes = first.n_classes;
  const double k = static_cast<double>(sets.size());
  for (std::size_t i = 0; i < first.rows.size(); ++i) {
    std::vector<double> mean(first.n_classes, 0.0);
    std::vector<double> votes(first.n_classes, 0.0);
    for (const auto& s : sets) {
      for (std::size_t c = 0; c < first.n_classes; ++c) mean[c] += s.rows[i].probabilities[c] / k;
      votes[s.rows[i].label] += 1.0;
    }
    const std::size_t label = argmax(mode == FusionMode::mean ? mean : votes);
    out.rows.push_back({first.rows[i].id, std::move(mean), label});
  }
  return out;
}

void write_predictions(const PredictionSet& set, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "id,label";
  for (std::size_t c = 0; c < set.n_classes; ++c) out << ",prob_" << c;
  out << '\n';
  for (const auto& r : set.rows) {
    out << r.id << ',' << r.label;
    for (double p : r.probabilities) out << ',' << fmt::format("{:.17g}", p);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

PredictionSet read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty predictions file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "label") {
    throw ParseError(path.string() + ": header must be id,label,prob_0,...");
  }
  PredictionSet set;
  set.n_classes = header.size() - 2;
  for (std::size_t c = 0; c < set.n_classes; ++c) {
    if (header[c + 2] != "prob_" + std::to_string(c)) {
      throw ParseError(fmt::format("{}: column {} should be prob_{}", path.string(), c + 2, c));
    }
  }
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw ParseError(fmt::format("{}: row {} has {} cells, expected {}", path.string(), row, cells.size(),
                                   header.size()));
    }
    Prediction p;
    p.id = cells[0];
    try {
      std::size_t used = 0;
      p.label = std::stoul(cells[1], &used);
      if (used != cells[1].size()) throw std::invalid_argument("label");
      for (std::size_t c = 0; c < set.n_classes; ++c) {
        p.probabilities.push_back(std::stod(cells[c + 2], &used));
        if (used != cells[c + 2].size()) throw std::invalid_argument("prob");
      }
    } catch (const std::logic_error&) {
      throw ParseError(fmt::format("{}: row {} is not numeric", path.string(), row));
    }
    if (p.label >= set.n_classes) {
      throw ParseError(fmt::format("{}: row {} label {} outside {} classes", path.string(), row, p.label,
                                   set.n_classes));
    }
    set.rows.push_back(std::move(p));
  }
  return set;
}

void write_fold_report(std::span<const FoldResult> folds, double mean, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "fold,test_uar\n";
  for (const auto& f : folds) out << f.fold << ',' << fmt::format("{:.6f}", f.test_uar) << '\n';
  out << "mean," << fmt::format("{:.6f}", mean) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace deepself
