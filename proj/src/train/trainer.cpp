#include "deepself/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "deepself/binary_io.hpp"
#include "deepself/error.hpp"

namespace deepself {

Optimizer parse_optimizer(std::string_view name) {
  if (name == "sgd") return Optimizer::sgd;
  if (name == "adam") return Optimizer::adam;
  throw ConfigError(fmt::format("optimizer must be one of {{sgd, adam}}, got '{}'", name));
}

std::string_view to_string(Optimizer optimizer) { return optimizer == Optimizer::sgd ? "sgd" : "adam"; }

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError(fmt::format("learning rate must be a positive real, got {}", learning_rate));
  }
  if (batch_size == 0) throw ConfigError("batch size must be a positive integer");
  if (epochs == 0) throw ConfigError("number of epochs must be a positive integer");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError(fmt::format("adam betas must lie in [0, 1), got {}, {}", beta1, beta2));
  }
  if (!(epsilon > 0.0)) throw ConfigError(fmt::format("adam epsilon must be positive, got {}", epsilon));
}

std::string TrainConfig::digest() const {
  const auto text = fmt::format("lr={:.17g};batch={};epochs={};opt={};b1={:.17g};b2={:.17g};eps={:.17g};seed={};shuffle={}",
                                learning_rate, batch_size, epochs, to_string(optimizer), beta1, beta2, epsilon, seed,
                                shuffle);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

// ---------------------------------------------------------------------------

void Dataset::add(std::string id, std::span<const float> sample, std::size_t label) {
  if (sample.size() != sample_size()) {
    throw ShapeError(fmt::format("sample '{}' has {} values, dataset samples are {} ({} values)", id, sample.size(),
                                 shape_str(sample_shape), sample_size()));
  }
  values.insert(values.end(), sample.begin(), sample.end());
  labels.push_back(label);
  ids.push_back(std::move(id));
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t n = sample_size();
  std::vector<float> out(indices.size() * n);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw IndexError(fmt::format("sample index {} out of {}", indices[i], size()));
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(indices[i] * n), n,
                out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  return Tensor(std::move(shape), std::move(out));
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.sample_shape = sample_shape;
  const std::size_t n = sample_size();
  for (auto i : indices) {
    out.add(ids.at(i), std::span<const float>(values).subspan(i * n, n), labels.at(i));
  }
  return out;
}

// ---------------------------------------------------------------------------

void sgd_step(std::span<float> params, std::span<const float> grads, double lr) {
  if (params.size() != grads.size()) {
    throw ShapeError(fmt::format("sgd: {} parameters vs {} gradients", params.size(), grads.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] = static_cast<float>(params[i] - lr * grads[i]);
  }
}

void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state, double lr, double beta1,
               double beta2, double epsilon) {
  if (params.size() != grads.size()) {
    throw ShapeError(fmt::format("adam: {} parameters vs {} gradients", params.size(), grads.size()));
  }
  if (state.t == 0 && state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError(fmt::format("adam: state sized {} for {} parameters", state.m.size(), params.size()));
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] = static_cast<float>(params[i] - lr * m_hat / (std::sqrt(v_hat) + epsilon));
  }
}

// ---------------------------------------------------------------------------

std::optional<std::size_t> TrainHistory::first_epoch_reaching(double threshold) const {
  for (const auto& e : epochs) {
    if (e.dev_uar >= threshold) return e.epoch;
  }
  return std::nullopt;
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,train_loss,train_uar,dev_uar\n";
  for (const auto& e : epochs) {
    out << fmt::format("{},{:.9g},{:.6f},{:.6f}\n", e.epoch, e.train_loss, e.train_uar, e.dev_uar);
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch, bool shuffle) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
  }
  return order;
}

PredictionSet predict(const Model& model, const Dataset& data, std::size_t batch_size) {
  PredictionSet out;
  out.n_classes = model.spec().n_classes;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.resize(std::min(batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto probs = model.forward(data.batch(idx), false).probabilities;
    const auto p = probs.data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.add(data.ids.empty() ? std::to_string(idx[i]) : data.ids[idx[i]],
              std::vector<double>(p.begin() + static_cast<std::ptrdiff_t>(i * out.n_classes),
                                  p.begin() + static_cast<std::ptrdiff_t>((i + 1) * out.n_classes)));
    }
  }
  return out;
}

double evaluate_uar(const Model& model, const Dataset& data, std::size_t batch_size) {
  const auto preds = predict(model, data, batch_size);
  const auto labels = preds.labels();
  return uar(confusion_matrix(data.labels, labels, model.spec().n_classes));
}

namespace {

void check_dataset(const Model& model, const Dataset& data, std::string_view role) {
  if (data.size() == 0) throw ContractError(fmt::format("{} set is empty", role));
  if (data.sample_shape != model.spec().input_shape) {
    throw ConfigError(fmt::format("{} samples are {}, model input is {}", role, shape_str(data.sample_shape),
                                  shape_str(model.spec().input_shape)));
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] >= model.spec().n_classes) {
      throw IndexError(fmt::format("{} sample {} has label {} but the model has {} classes", role, i, data.labels[i],
                                   model.spec().n_classes));
    }
  }
}

}  // namespace

TrainResult train(const Model& model, const Dataset& train_set, const Dataset& dev_set, const TrainConfig& config,
                  const std::optional<std::vector<std::size_t>>& trainable) {
  config.validate();
  check_dataset(model, train_set, "training");
  check_dataset(model, dev_set, "dev");

  Model work = model.clone();
  auto& params = work.parameters();
  std::vector<std::size_t> update;
  if (trainable) {
    update = *trainable;
  } else {
    update.resize(params.size());
    std::iota(update.begin(), update.end(), std::size_t{0});
  }
  std::vector<AdamState> adam(params.size());
  const std::size_t n_classes = work.spec().n_classes;

  TrainResult result{work.clone(), {}};
  double best = -1.0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = epoch_order(train_set.size(), config.seed, epoch, config.shuffle);
    double loss_sum = 0.0;
    std::vector<std::size_t> truth, guessed;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_no) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(config.batch_size, order.size() - start));
      std::vector<std::size_t> targets;
      for (auto i : idx) targets.push_back(train_set.labels[i]);
      for (auto& p : params) p.tensor.zero_grad();
      Tape<float>::current().clear();
      try {
        const auto out = work.forward(train_set.batch(idx), true);
        const auto lp = softmax_cross_entropy(out.logits, targets);
        const double loss = lp.loss.item();
        if (!std::isfinite(loss)) throw NumericError("loss is not finite");
        backward(lp.loss);
        loss_sum += loss * static_cast<double>(idx.size());
        const auto probs = lp.probabilities.data();
        for (std::size_t r = 0; r < idx.size(); ++r) {
          std::vector<double> row(probs.begin() + static_cast<std::ptrdiff_t>(r * n_classes),
                                  probs.begin() + static_cast<std::ptrdiff_t>((r + 1) * n_classes));
          guessed.push_back(argmax(row));
        }
        truth.insert(truth.end(), targets.begin(), targets.end());
      } catch (const NumericError& e) {
        Tape<float>::current().clear();
        throw NumericError(fmt::format("epoch {}, batch {}: {}", epoch, batch_no, e.what()));
      }
      for (auto i : update) {
        auto& t = params.at(i).tensor;
        if (config.optimizer == Optimizer::sgd) {
          sgd_step(t.mutable_data(), t.grad(), config.learning_rate);
        } else {
          adam_step(t.mutable_data(), t.grad(), adam[i], config.learning_rate, config.beta1, config.beta2,
                    config.epsilon);
        }
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.train_uar = uar(confusion_matrix(truth, guessed, n_classes));
    rec.dev_uar = evaluate_uar(work, dev_set);
    result.history.epochs.push_back(rec);
    if (rec.dev_uar > best) {
      best = rec.dev_uar;
      result.history.best_epoch = epoch;
      result.history.best_dev_uar = rec.dev_uar;
      result.model = work.clone();
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

std::string encode_checkpoint(const Model& model, const CheckpointMetadata& metadata) {
  io::ByteWriter w;
  w.raw("DSLF");
  w.u32(checkpoint_version);
  const auto spec = model.spec().to_json();
  w.u32(static_cast<std::uint32_t>(spec.size()));
  w.raw(spec);
  const auto& params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.raw(p.name);
    w.u8(static_cast<std::uint8_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : p.tensor.data()) w.f32(v);
  }
  std::string meta;
  for (const auto& [k, v] : metadata) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ContractError("checkpoint metadata key/value may not contain '=' or newlines: " + k);
    }
    meta += k + "=" + v + "\n";
  }
  w.u32(static_cast<std::uint32_t>(meta.size()));
  w.raw(meta);
  return w.bytes();
}

void save_checkpoint(const Model& model, const CheckpointMetadata& metadata, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.raw(encode_checkpoint(model, metadata));
  w.save(path);
}

Checkpoint decode_checkpoint(std::string bytes, const std::string& origin) {
  io::ByteReader r(std::move(bytes), origin);
  if (r.remaining() < 4 || r.raw(4) != "DSLF") throw BadMagicError(origin + ": not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != checkpoint_version) {
    throw UnsupportedVersionError(fmt::format("{}: checkpoint version {} (supported: {})", origin, version,
                                              checkpoint_version));
  }
  const auto spec = ModelSpec::from_json(r.raw(r.u32()));
  const auto count = r.u32();
  std::vector<NamedParameter<float>> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedParameter<float> p;
    p.name = r.raw(r.u16());
    Shape shape(r.u8());
    for (auto& d : shape) d = r.u32();
    std::vector<float> data(shape_numel(shape));
    if (r.remaining() < data.size() * 4) {
      throw TruncatedFileError(fmt::format("{}: truncated in parameter '{}'", origin, p.name));
    }
    for (auto& v : data) v = r.f32();
    try {
      p.tensor = Tensor(std::move(shape), std::move(data));
    } catch (const Error& e) {
      throw IntegrityError(fmt::format("{}: parameter '{}': {}", origin, p.name, e.what()));
    }
    params.push_back(std::move(p));
  }
  CheckpointMetadata meta;
  std::istringstream lines(r.raw(r.u32()));
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IntegrityError(origin + ": malformed metadata line '" + line + "'");
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (r.remaining() != 0) throw IntegrityError(fmt::format("{}: {} trailing bytes", origin, r.remaining()));
  try {
    return {Model::from_parameters(spec, std::move(params)), std::move(meta)};
  } catch (const IntegrityError& e) {
    throw IntegrityError(origin + ": " + e.what());
  } catch (const ConfigError& e) {
    throw IntegrityError(origin + ": embedded model spec is invalid: " + e.what());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path), path.string()); }

CheckpointMetadata training_metadata(const TrainHistory& history, const TrainConfig& config,
                                     std::span<const std::string> label_names) {
  CheckpointMetadata meta;
  meta["epoch"] = std::to_string(history.best_epoch);
  meta["dev_uar"] = fmt::format("{:.6f}", history.best_dev_uar);
  meta["config_digest"] = config.digest();
  if (!label_names.empty()) {
    std::string joined;
    for (std::size_t i = 0; i < label_names.size(); ++i) joined += (i ? "," : "") + label_names[i];
    meta["labels"] = joined;
  }
  return meta;
}

TrainResult fine_tune(Model pretrained, const Dataset& train_set, const Dataset& dev_set, const TrainConfig& config,
                      std::size_t new_n_classes, bool freeze_backbone) {
  config.validate();
  if (train_set.sample_shape != pretrained.spec().input_shape) {
    throw ConfigError(fmt::format("checkpoint expects input {}, fine-tuning data is {}",
                                  shape_str(pretrained.spec().input_shape), shape_str(train_set.sample_shape)));
  }
  if (new_n_classes != pretrained.spec().n_classes) pretrained.reset_head(new_n_classes, config.seed);
  std::optional<std::vector<std::size_t>> trainable;
  if (freeze_backbone) trainable = pretrained.head_parameters();
  return train(pretrained, train_set, dev_set, config, trainable);
}

TrainResult fine_tune(const std::filesystem::path& checkpoint_path, const Dataset& train_set, const Dataset& dev_set,
                      const TrainConfig& config, std::size_t new_n_classes, bool freeze_backbone) {
  return fine_tune(load_checkpoint(checkpoint_path).model, train_set, dev_set, config, new_n_classes,
                   freeze_backbone);
}

}  // namespace deepself
