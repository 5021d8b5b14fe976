#pragma once

// Declarative layer stacks (dense / conv / recurrent), their shape plans, and
// instantiated models. Per-sample input shapes carry no batch axis:
//   [N]              feature vector
//   [C x S1 .. Sk]   channels x spatial extents (k = 1..3); the last axis is
//                    time when a recurrent layer consumes it
// Batches prepend B.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "deepself/ops.hpp"
#include "deepself/recurrent.hpp"
#include "deepself/tensor.hpp"

namespace deepself {

struct DenseLayer {
  std::size_t units = 0;
};

struct ConvLayer {
  std::size_t out_channels = 0;
  std::vector<std::size_t> kernel;  // one entry per spatial axis
  std::vector<std::size_t> stride;
  std::vector<std::size_t> padding;

  std::size_t rank() const { return kernel.size(); }
};

struct RecurrentLayer {
  CellKind cell = CellKind::gru;
  std::size_t hidden = 0;
  std::size_t layers = 1;
  Direction direction = Direction::uni;
};

struct FlattenLayer {};

/// [C x S.. x T] -> [T x C*S..], time kept as the sequence axis.
struct SequenceReshapeLayer {};

using LayerSpec = std::variant<DenseLayer, ConvLayer, RecurrentLayer, FlattenLayer, SequenceReshapeLayer>;

std::string describe(const LayerSpec& layer);

struct ModelSpec {
  Shape input_shape;
  std::vector<LayerSpec> layers;  // last must be DenseLayer{n_classes}
  std::size_t n_classes = 2;
  Activation activation = Activation::relu;
  std::uint64_t seed = 0;

  std::string to_json() const;
  static ModelSpec from_json(const std::string& text);
};

struct PlannedLayer {
  LayerSpec layer;
  Shape input;
  Shape output;
  /// Index into ModelSpec::layers, or nullopt for an inserted reshape.
  std::optional<std::size_t> spec_index;
  /// Recurrent only: hand the full output sequence to the next layer.
  bool emits_sequence = false;
};

struct ShapePlan {
  std::vector<PlannedLayer> layers;
  const Shape& output() const { return layers.back().output; }
};

/// floor((in + 2*padding - kernel) / stride) + 1; ConfigError when < 1.
std::size_t infer_conv_output_size(std::size_t in_extent, std::size_t kernel, std::size_t stride,
                                   std::size_t padding);

/// Resolves per-layer shapes, inserting Flatten before Dense-after-grid and
/// SequenceReshape before Recurrent-after-grid. Throws ConfigError for any
/// impossible chain.
ShapePlan plan_shapes(const ModelSpec& spec);

struct ParameterSlot {
  std::string name;
  Shape shape;
};

/// Names and shapes of every parameter the spec instantiates, in order.
std::vector<ParameterSlot> parameter_layout(const ModelSpec& spec);

template <typename T>
struct NamedParameter {
  std::string name;
  BasicTensor<T> tensor;
};

template <typename T>
struct ForwardResult {
  BasicTensor<T> logits;         // [B x n_classes]
  BasicTensor<T> probabilities;  // [B x n_classes], rows sum to 1
};

template <typename T>
class BasicModel {
 public:
  /// Glorot-uniform weights, zero biases, LSTM forget bias 1; deterministic
  /// in spec.seed.
  static BasicModel init(const ModelSpec& spec);
  /// Adopts existing parameters; ShapeError/IntegrityError if they disagree
  /// with the spec's layout.
  static BasicModel from_parameters(const ModelSpec& spec, std::vector<NamedParameter<T>> params);

  const ModelSpec& spec() const { return spec_; }
  const ShapePlan& plan() const { return plan_; }
  std::vector<NamedParameter<T>>& parameters() { return params_; }
  const std::vector<NamedParameter<T>>& parameters() const { return params_; }
  BasicTensor<T>& parameter(const std::string& name);

  /// Indices of the final Dense layer's weight and bias.
  std::vector<std::size_t> head_parameters() const;

  /// Swaps the classifier head for a freshly initialised one with n_classes
  /// outputs (Glorot, seeded). Other parameters are untouched.
  void reset_head(std::size_t n_classes, std::uint64_t seed);

  /// batch [B x input_shape]. With training=false nothing is recorded.
  ForwardResult<T> forward(const BasicTensor<T>& batch, bool training) const;

  /// Deep copy of all parameters.
  BasicModel clone() const;

 private:
  BasicModel() = default;
  ModelSpec spec_;
  ShapePlan plan_;
  std::vector<NamedParameter<T>> params_;
};

using Model = BasicModel<float>;
using Model64 = BasicModel<double>;

}  // namespace deepself
