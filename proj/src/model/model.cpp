#include "deepself/model.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "deepself/error.hpp"
#include "json.hpp"

namespace deepself {

namespace {

template <class... Fs>
struct overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
overloaded(Fs...) -> overloaded<Fs...>;

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

}  // namespace

std::string describe(const LayerSpec& layer) {
  return std::visit(overloaded{
                        [](const DenseLayer& d) { return fmt::format("dense({})", d.units); },
                        [](const ConvLayer& c) {
                          return fmt::format("conv{}d(out={}, kernel={}, stride={}, padding={})", c.rank(),
                                             c.out_channels, join(c.kernel), join(c.stride), join(c.padding));
                        },
                        [](const RecurrentLayer& r) {
                          return fmt::format("{}(hidden={}, layers={}, {})", to_string(r.cell), r.hidden, r.layers,
                                             to_string(r.direction));
                        },
                        [](const FlattenLayer&) { return std::string("flatten"); },
                        [](const SequenceReshapeLayer&) { return std::string("to_sequence"); },
                    },
                    layer);
}

// ---------------------------------------------------------------------------
// JSON form of ModelSpec, embedded in checkpoints.

std::string ModelSpec::to_json() const {
  nlohmann::json j;
  j["input_shape"] = input_shape;
  j["n_classes"] = n_classes;
  j["activation"] = std::string(to_string(activation));
  j["seed"] = seed;
  auto layers_json = nlohmann::json::array();
  for (const auto& layer : layers) {
    nlohmann::json l;
    std::visit(overloaded{
                   [&](const DenseLayer& d) {
                     l["type"] = "dense";
                     l["units"] = d.units;
                   },
                   [&](const ConvLayer& c) {
                     l["type"] = "conv";
                     l["out_channels"] = c.out_channels;
                     l["kernel"] = c.kernel;
                     l["stride"] = c.stride;
                     l["padding"] = c.padding;
                   },
                   [&](const RecurrentLayer& r) {
                     l["type"] = "recurrent";
                     l["cell"] = std::string(to_string(r.cell));
                     l["hidden"] = r.hidden;
                     l["layers"] = r.layers;
                     l["direction"] = std::string(to_string(r.direction));
                   },
                   [&](const FlattenLayer&) { l["type"] = "flatten"; },
                   [&](const SequenceReshapeLayer&) { l["type"] = "to_sequence"; },
               },
               layer);
    layers_json.push_back(std::move(l));
  }
  j["layers"] = std::move(layers_json);
  return j.dump();
}

ModelSpec ModelSpec::from_json(const std::string& text) {
  ModelSpec spec;
  try {
    const auto j = nlohmann::json::parse(text);
    spec.input_shape = j.at("input_shape").get<Shape>();
    spec.n_classes = j.at("n_classes").get<std::size_t>();
    spec.activation = parse_activation(j.at("activation").get<std::string>());
    spec.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& l : j.at("layers")) {
      const auto type = l.at("type").get<std::string>();
      if (type == "dense") {
        spec.layers.emplace_back(DenseLayer{l.at("units").get<std::size_t>()});
      } else if (type == "conv") {
        spec.layers.emplace_back(ConvLayer{l.at("out_channels").get<std::size_t>(),
                                           l.at("kernel").get<std::vector<std::size_t>>(),
                                           l.at("stride").get<std::vector<std::size_t>>(),
                                           l.at("padding").get<std::vector<std::size_t>>()});
      } else if (type == "recurrent") {
        spec.layers.emplace_back(RecurrentLayer{parse_cell_kind(l.at("cell").get<std::string>()),
                                                l.at("hidden").get<std::size_t>(), l.at("layers").get<std::size_t>(),
                                                parse_direction(l.at("direction").get<std::string>())});
      } else if (type == "flatten") {
        spec.layers.emplace_back(FlattenLayer{});
      } else if (type == "to_sequence") {
        spec.layers.emplace_back(SequenceReshapeLayer{});
      } else {
        throw FormatError("unknown layer type '" + type + "' in model spec");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model spec: ") + e.what());
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Shape planning.

std::size_t infer_conv_output_size(std::size_t in_extent, std::size_t kernel, std::size_t stride,
                                   std::size_t padding) {
  return conv_output_extent(in_extent, kernel, stride, padding);
}

namespace {

enum class Form { vector, grid, sequence };

Form form_of(const Shape& s) { return s.size() == 1 ? Form::vector : Form::grid; }

Shape sequence_of_grid(const Shape& grid) {
  // [C x S.. x T] -> [T x C*S..]
  const std::size_t steps = grid.back();
  return {steps, shape_numel(grid) / steps};
}

void require_positive(std::size_t v, const char* what, std::size_t layer) {
  if (v == 0) throw ConfigError(fmt::format("layer {}: {} must be a positive integer", layer, what));
}

}  // namespace

ShapePlan plan_shapes(const ModelSpec& spec) {
  if (spec.layers.empty()) throw ConfigError("model has no layers");
  if (spec.input_shape.empty() || spec.input_shape.size() > 4) {
    throw ConfigError("input shape must have 1 to 4 axes, got " + shape_str(spec.input_shape));
  }
  for (auto d : spec.input_shape) {
    if (d == 0) throw ConfigError("input shape has a zero extent: " + shape_str(spec.input_shape));
  }
  if (spec.n_classes < 2) throw ConfigError(fmt::format("need at least 2 classes, got {}", spec.n_classes));
  const auto* head = std::get_if<DenseLayer>(&spec.layers.back());
  if (!head || head->units != spec.n_classes) {
    throw ConfigError(fmt::format("last layer must be dense({}) producing the class logits, got {}", spec.n_classes,
                                  describe(spec.layers.back())));
  }

  ShapePlan plan;
  Shape cur = spec.input_shape;
  Form form = form_of(cur);
  bool seen_recurrent = false;

  const auto push_implicit = [&](LayerSpec layer, Shape out, Form next) {
    plan.layers.push_back(PlannedLayer{std::move(layer), cur, out, std::nullopt, false});
    cur = std::move(out);
    form = next;
  };

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& layer = spec.layers[i];
    std::visit(overloaded{
                   [&](const DenseLayer& d) {
                     require_positive(d.units, "hidden nodes", i);
                     if (form != Form::vector) push_implicit(FlattenLayer{}, Shape{shape_numel(cur)}, Form::vector);
                     plan.layers.push_back(PlannedLayer{layer, cur, Shape{d.units}, i, false});
                     cur = Shape{d.units};
                   },
                   [&](const ConvLayer& c) {
                     if (seen_recurrent) {
                       throw ConfigError(fmt::format("layer {}: a recurrent layer cannot feed a convolution", i));
                     }
                     require_positive(c.out_channels, "channels", i);
                     if (c.rank() < 1 || c.rank() > 3) {
                       throw ConfigError(fmt::format("layer {}: convolution rank must be 1, 2 or 3", i));
                     }
                     if (c.stride.size() != c.rank() || c.padding.size() != c.rank()) {
                       throw ConfigError(fmt::format("layer {}: kernel, stride and padding need {} entries each", i,
                                                     c.rank()));
                     }
                     if (form != Form::grid || cur.size() != c.rank() + 1) {
                       throw ConfigError(fmt::format("layer {}: conv{}d needs [C x {} spatial] input, got {}", i,
                                                     c.rank(), c.rank(), shape_str(cur)));
                     }
                     Shape out{c.out_channels};
                     for (std::size_t a = 0; a < c.rank(); ++a) {
                       require_positive(c.kernel[a], "kernel size", i);
                       require_positive(c.stride[a], "stride", i);
                       try {
                         out.push_back(infer_conv_output_size(cur[a + 1], c.kernel[a], c.stride[a], c.padding[a]));
                       } catch (const ConfigError& e) {
                         throw ConfigError(fmt::format("layer {} ({}), spatial axis {}: {}", i, describe(c), a,
                                                       e.what()));
                       }
                     }
                     plan.layers.push_back(PlannedLayer{layer, cur, out, i, false});
                     cur = std::move(out);
                   },
                   [&](const RecurrentLayer& r) {
                     require_positive(r.hidden, "hidden nodes", i);
                     require_positive(r.layers, "hidden layers", i);
                     if (form == Form::vector) {
                       throw ConfigError(fmt::format("layer {}: recurrent layer needs a sequence input, got {}", i,
                                                     shape_str(cur)));
                     }
                     if (form == Form::grid) push_implicit(SequenceReshapeLayer{}, sequence_of_grid(cur), Form::sequence);
                     const std::size_t width = r.hidden * (r.direction == Direction::bi ? 2 : 1);
                     const bool next_recurrent =
                         i + 1 < spec.layers.size() && std::holds_alternative<RecurrentLayer>(spec.layers[i + 1]);
                     Shape out = next_recurrent ? Shape{cur[0], width} : Shape{width};
                     plan.layers.push_back(PlannedLayer{layer, cur, out, i, next_recurrent});
                     cur = std::move(out);
                     form = next_recurrent ? Form::sequence : Form::vector;
                     seen_recurrent = true;
                   },
                   [&](const FlattenLayer&) {
                     Shape out{shape_numel(cur)};
                     plan.layers.push_back(PlannedLayer{layer, cur, out, i, false});
                     cur = std::move(out);
                     form = Form::vector;
                   },
                   [&](const SequenceReshapeLayer&) {
                     if (form != Form::grid) {
                       throw ConfigError(fmt::format("layer {}: to_sequence needs [C x ... x T] input, got {}", i,
                                                     shape_str(cur)));
                     }
                     Shape out = sequence_of_grid(cur);
                     plan.layers.push_back(PlannedLayer{layer, cur, out, i, false});
                     cur = std::move(out);
                     form = Form::sequence;
                   },
               },
               layer);
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Parameters.

namespace {

std::string layer_prefix(std::size_t spec_index) { return fmt::format("layer{}", spec_index); }

std::string recurrent_prefix(std::size_t spec_index, std::size_t sublayer, bool backward) {
  return fmt::format("layer{}.l{}.{}", spec_index, sublayer, backward ? "bwd" : "fwd");
}

std::string gate_suffix(const std::string& gate) { return gate.empty() ? "" : "_" + gate; }

// Layout of one planned layer's parameters.
std::vector<ParameterSlot> layer_slots(const PlannedLayer& p) {
  std::vector<ParameterSlot> slots;
  if (!p.spec_index) return slots;
  const std::size_t idx = *p.spec_index;
  std::visit(overloaded{
                 [&](const DenseLayer& d) {
                   slots.push_back({layer_prefix(idx) + ".weight", Shape{p.input[0], d.units}});
                   slots.push_back({layer_prefix(idx) + ".bias", Shape{d.units}});
                 },
                 [&](const ConvLayer& c) {
                   Shape k{c.out_channels, p.input[0]};
                   k.insert(k.end(), c.kernel.begin(), c.kernel.end());
                   slots.push_back({layer_prefix(idx) + ".kernel", k});
                   slots.push_back({layer_prefix(idx) + ".bias", Shape{c.out_channels}});
                 },
                 [&](const RecurrentLayer& r) {
                   const std::size_t dirs = r.direction == Direction::bi ? 2 : 1;
                   const auto gates = gate_names(r.cell);
                   for (std::size_t l = 0; l < r.layers; ++l) {
                     const std::size_t in = l == 0 ? p.input[1] : r.hidden * dirs;
                     for (std::size_t d = 0; d < dirs; ++d) {
                       const auto prefix = recurrent_prefix(idx, l, d == 1);
                       for (const auto& g : gates) slots.push_back({prefix + ".W" + gate_suffix(g), Shape{in, r.hidden}});
                       for (const auto& g : gates)
                         slots.push_back({prefix + ".U" + gate_suffix(g), Shape{r.hidden, r.hidden}});
                       for (const auto& g : gates) slots.push_back({prefix + ".b" + gate_suffix(g), Shape{r.hidden}});
                     }
                   }
                 },
                 [](const FlattenLayer&) {},
                 [](const SequenceReshapeLayer&) {},
             },
             p.layer);
  return slots;
}

std::vector<ParameterSlot> layout_of(const ShapePlan& plan) {
  std::vector<ParameterSlot> all;
  for (const auto& p : plan.layers) {
    auto s = layer_slots(p);
    all.insert(all.end(), s.begin(), s.end());
  }
  return all;
}

bool is_bias(const std::string& name) {
  const auto dot = name.rfind('.');
  const auto leaf = name.substr(dot + 1);
  return leaf == "bias" || leaf == "b" || leaf.rfind("b_", 0) == 0;
}

// Glorot-uniform for weights, zeros for biases, 1.0 for the LSTM forget bias.
template <typename T>
BasicTensor<T> initialise(const ParameterSlot& slot, std::mt19937_64& rng) {
  const std::size_t n = shape_numel(slot.shape);
  std::vector<T> values(n, T{0});
  if (is_bias(slot.name)) {
    if (slot.name.ends_with(".b_f")) std::fill(values.begin(), values.end(), T{1});
  } else {
    std::size_t fan_in, fan_out;
    if (slot.shape.size() == 2) {
      fan_in = slot.shape[0];
      fan_out = slot.shape[1];
    } else {
      const std::size_t receptive = n / (slot.shape[0] * slot.shape[1]);
      fan_in = slot.shape[1] * receptive;
      fan_out = slot.shape[0] * receptive;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (auto& v : values) v = static_cast<T>(u(rng));
  }
  auto t = BasicTensor<T>(slot.shape, std::move(values));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

std::vector<ParameterSlot> parameter_layout(const ModelSpec& spec) { return layout_of(plan_shapes(spec)); }

template <typename T>
BasicModel<T> BasicModel<T>::init(const ModelSpec& spec) {
  BasicModel m;
  m.spec_ = spec;
  m.plan_ = plan_shapes(spec);
  std::mt19937_64 rng(spec.seed);
  for (const auto& slot : layout_of(m.plan_)) m.params_.push_back({slot.name, initialise<T>(slot, rng)});
  return m;
}

template <typename T>
BasicModel<T> BasicModel<T>::from_parameters(const ModelSpec& spec, std::vector<NamedParameter<T>> params) {
  BasicModel m;
  m.spec_ = spec;
  m.plan_ = plan_shapes(spec);
  const auto layout = layout_of(m.plan_);
  if (layout.size() != params.size()) {
    throw IntegrityError(
        fmt::format("model spec expects {} parameter tensors, got {}", layout.size(), params.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].name != params[i].name) {
      throw IntegrityError(fmt::format("parameter {} is '{}', spec expects '{}'", i, params[i].name, layout[i].name));
    }
    if (layout[i].shape != params[i].tensor.shape()) {
      throw IntegrityError(fmt::format("parameter '{}' has shape {}, spec expects {}", layout[i].name,
                                       shape_str(params[i].tensor.shape()), shape_str(layout[i].shape)));
    }
    params[i].tensor.set_requires_grad(true);
  }
  m.params_ = std::move(params);
  return m;
}

template <typename T>
BasicTensor<T>& BasicModel<T>::parameter(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw IndexError("no parameter named '" + name + "'");
}

template <typename T>
std::vector<std::size_t> BasicModel<T>::head_parameters() const {
  const std::string prefix = layer_prefix(spec_.layers.size() - 1) + ".";
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name.rfind(prefix, 0) == 0) out.push_back(i);
  }
  return out;
}

template <typename T>
void BasicModel<T>::reset_head(std::size_t n_classes, std::uint64_t seed) {
  ModelSpec next = spec_;
  next.n_classes = n_classes;
  std::get<DenseLayer>(next.layers.back()).units = n_classes;
  ShapePlan plan = plan_shapes(next);
  const auto layout = layout_of(plan);
  const auto head = head_parameters();
  std::mt19937_64 rng(seed);
  for (auto i : head) params_[i].tensor = initialise<T>(layout[i], rng);
  spec_ = std::move(next);
  plan_ = std::move(plan);
}

template <typename T>
BasicModel<T> BasicModel<T>::clone() const {
  BasicModel m;
  m.spec_ = spec_;
  m.plan_ = plan_;
  for (const auto& p : params_) {
    auto t = p.tensor.clone();
    t.set_requires_grad(p.tensor.requires_grad());
    m.params_.push_back({p.name, std::move(t)});
  }
  return m;
}

template <typename T>
ForwardResult<T> BasicModel<T>::forward(const BasicTensor<T>& batch, bool training) const {
  Shape expected{0};
  expected.insert(expected.end(), spec_.input_shape.begin(), spec_.input_shape.end());
  if (batch.rank() != expected.size() ||
      !std::equal(spec_.input_shape.begin(), spec_.input_shape.end(), batch.shape().begin() + 1)) {
    throw ContractError(fmt::format("model expects input [B x {}], got {}",
                                    shape_str(spec_.input_shape).substr(1, shape_str(spec_.input_shape).size() - 2),
                                    shape_str(batch.shape())));
  }
  std::optional<NoGradGuard> no_grad;
  if (!training) no_grad.emplace();

  const std::size_t batch_size = batch.dim(0);
  const std::size_t last = plan_.layers.size() - 1;
  BasicTensor<T> x = batch;
  std::size_t cursor = 0;  // next unread parameter
  const auto take = [&]() -> const BasicTensor<T>& { return params_[cursor++].tensor; };

  for (std::size_t li = 0; li < plan_.layers.size(); ++li) {
    const auto& p = plan_.layers[li];
    std::visit(overloaded{
                   [&](const DenseLayer&) {
                     const auto& w = take();
                     const auto& b = take();
                     x = add_bias(matmul(x, w), b);
                     if (li != last) x = activation(x, spec_.activation);
                   },
                   [&](const ConvLayer& c) {
                     const auto& k = take();
                     const auto& b = take();
                     x = activation(convolve_nd(x, k, b, ConvGeometry{c.stride, c.padding}), spec_.activation);
                   },
                   [&](const RecurrentLayer& r) {
                     const std::size_t gates = gate_names(r.cell).size();
                     const auto read_cell = [&] {
                       CellParams<T> cell;
                       cell.kind = r.cell;
                       for (std::size_t g = 0; g < gates; ++g) cell.input_weights.push_back(take());
                       for (std::size_t g = 0; g < gates; ++g) cell.recurrent_weights.push_back(take());
                       for (std::size_t g = 0; g < gates; ++g) cell.biases.push_back(take());
                       return cell;
                     };
                     SequenceOutput<T> out;
                     for (std::size_t l = 0; l < r.layers; ++l) {
                       if (r.direction == Direction::bi) {
                         auto fwd = read_cell();
                         auto bwd = read_cell();
                         out = bidirectional_sequence(fwd, bwd, x);
                       } else {
                         out = run_sequence(read_cell(), x);
                       }
                       x = out.outputs;
                     }
                     x = p.emits_sequence ? out.outputs : out.final;
                   },
                   [&](const FlattenLayer&) { x = reshape(x, {batch_size, x.numel() / batch_size}); },
                   [&](const SequenceReshapeLayer&) { x = to_sequence(x); },
               },
               p.layer);
  }
  auto probabilities = softmax(x);
  return {std::move(x), std::move(probabilities)};
}

template class BasicModel<float>;
template class BasicModel<double>;

}  // namespace deepself
