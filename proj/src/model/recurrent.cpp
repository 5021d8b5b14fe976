#include "deepself/recurrent.hpp"

#include <fmt/format.h>

#include "deepself/error.hpp"
#include "deepself/ops.hpp"

namespace deepself {

CellKind parse_cell_kind(std::string_view name) {
  if (name == "rnn") return CellKind::rnn;
  if (name == "lstm") return CellKind::lstm;
  if (name == "gru") return CellKind::gru;
  throw ConfigError(fmt::format("rnn type must be one of {{rnn, lstm, gru}}, got '{}'", name));
}

std::string_view to_string(CellKind kind) {
  switch (kind) {
    case CellKind::rnn: return "rnn";
    case CellKind::lstm: return "lstm";
    case CellKind::gru: return "gru";
  }
  return "gru";
}

Direction parse_direction(std::string_view name) {
  if (name == "uni") return Direction::uni;
  if (name == "bi") return Direction::bi;
  throw ConfigError(fmt::format("rnn direction must be one of {{uni, bi}}, got '{}'", name));
}

std::string_view to_string(Direction direction) { return direction == Direction::bi ? "bi" : "uni"; }

std::vector<std::string> gate_names(CellKind kind) {
  switch (kind) {
    case CellKind::rnn: return {""};
    case CellKind::gru: return {"r", "z", "n"};
    case CellKind::lstm: return {"i", "f", "g", "o"};
  }
  return {};
}

namespace {

template <typename T>
void check_cell(const CellParams<T>& cell) {
  const std::size_t gates = gate_names(cell.kind).size();
  if (cell.input_weights.size() != gates || cell.recurrent_weights.size() != gates || cell.biases.size() != gates) {
    throw ContractError(fmt::format("{} cell needs {} gates of parameters", to_string(cell.kind), gates));
  }
}

// W x + U h + b for one gate; `hidden_in` lets GRU feed r*h to the candidate.
template <typename T>
BasicTensor<T> gate_preactivation(const CellParams<T>& cell, std::size_t gate, const BasicTensor<T>& x,
                                  const BasicTensor<T>& hidden_in) {
  return add_bias(add(matmul(x, cell.input_weights[gate]), matmul(hidden_in, cell.recurrent_weights[gate])),
                  cell.biases[gate]);
}

}  // namespace

template <typename T>
CellState<T> zero_state(const CellParams<T>& cell, std::size_t batch) {
  const std::size_t h = cell.hidden_size();
  CellState<T> s{BasicTensor<T>({batch, h}), BasicTensor<T>({batch, h})};
  return s;
}

template <typename T>
BasicTensor<T> gru_cell(const CellParams<T>& cell, const BasicTensor<T>& x, const BasicTensor<T>& h) {
  if (cell.kind != CellKind::gru) throw ContractError("gru_cell called with a non-GRU cell");
  return cell_step(cell, x, CellState<T>{h, h}).h;
}

template <typename T>
CellState<T> cell_step(const CellParams<T>& cell, const BasicTensor<T>& x, const CellState<T>& prev) {
  check_cell(cell);
  if (x.rank() != 2 || x.dim(1) != cell.input_size()) {
    throw ShapeError(fmt::format("{} cell expects [B x {}] input, got {}", to_string(cell.kind), cell.input_size(),
                                 shape_str(x.shape())));
  }
  if (prev.h.rank() != 2 || prev.h.dim(0) != x.dim(0) || prev.h.dim(1) != cell.hidden_size()) {
    throw ShapeError(fmt::format("{} cell expects [{} x {}] hidden state, got {}", to_string(cell.kind), x.dim(0),
                                 cell.hidden_size(), shape_str(prev.h.shape())));
  }
  switch (cell.kind) {
    case CellKind::rnn:
      return {activation(gate_preactivation(cell, 0, x, prev.h), Activation::tanh), prev.c};
    case CellKind::gru: {
      auto r = activation(gate_preactivation(cell, 0, x, prev.h), Activation::sigmoid);
      auto z = activation(gate_preactivation(cell, 1, x, prev.h), Activation::sigmoid);
      auto n = activation(gate_preactivation(cell, 2, x, mul(r, prev.h)), Activation::tanh);
      auto h = add(mul(affine(z, T{-1}, T{1}), n), mul(z, prev.h));
      return {h, prev.c};
    }
    case CellKind::lstm: {
      auto i = activation(gate_preactivation(cell, 0, x, prev.h), Activation::sigmoid);
      auto f = activation(gate_preactivation(cell, 1, x, prev.h), Activation::sigmoid);
      auto g = activation(gate_preactivation(cell, 2, x, prev.h), Activation::tanh);
      auto o = activation(gate_preactivation(cell, 3, x, prev.h), Activation::sigmoid);
      auto c = add(mul(f, prev.c), mul(i, g));
      auto h = mul(o, activation(c, Activation::tanh));
      return {h, c};
    }
  }
  throw ContractError("unknown cell kind");
}

template <typename T>
SequenceOutput<T> run_sequence(const CellParams<T>& cell, const BasicTensor<T>& seq, bool reverse) {
  if (seq.rank() == 2) {
    auto batched = run_sequence(cell, reshape(seq, {1, seq.dim(0), seq.dim(1)}), reverse);
    const std::size_t hidden = batched.final.dim(1);
    return {reshape(batched.outputs, {seq.dim(0), hidden}), reshape(batched.final, {hidden})};
  }
  if (seq.rank() != 3) throw ShapeError("sequence must be [B x T x F] or [T x F], got " + shape_str(seq.shape()));
  const std::size_t steps = seq.dim(1);
  if (steps == 0) throw ContractError("empty sequence");
  auto state = zero_state(cell, seq.dim(0));
  std::vector<BasicTensor<T>> outputs(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    state = cell_step(cell, select_step(seq, t), state);
    outputs[t] = state.h;
  }
  return {stack_steps(outputs), state.h};
}

template <typename T>
SequenceOutput<T> bidirectional_sequence(const CellParams<T>& forward, const CellParams<T>& backward,
                                         const BasicTensor<T>& seq) {
  auto fwd = run_sequence(forward, seq, false);
  auto bwd = run_sequence(backward, seq, true);
  return {concat_last(fwd.outputs, bwd.outputs), concat_last(fwd.final, bwd.final)};
}

#define DEEPSELF_INSTANTIATE_RECURRENT(T)                                                                        \
  template CellState<T> zero_state(const CellParams<T>&, std::size_t);                                          \
  template CellState<T> cell_step(const CellParams<T>&, const BasicTensor<T>&, const CellState<T>&);            \
  template BasicTensor<T> gru_cell(const CellParams<T>&, const BasicTensor<T>&, const BasicTensor<T>&);         \
  template SequenceOutput<T> run_sequence(const CellParams<T>&, const BasicTensor<T>&, bool);                   \
  template SequenceOutput<T> bidirectional_sequence(const CellParams<T>&, const CellParams<T>&,                 \
                                                    const BasicTensor<T>&);

DEEPSELF_INSTANTIATE_RECURRENT(float)
DEEPSELF_INSTANTIATE_RECURRENT(double)

#undef DEEPSELF_INSTANTIATE_RECURRENT

}  // namespace deepself
