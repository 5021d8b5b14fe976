#pragma once

// Recurrent cells (plain RNN, LSTM, GRU) built from tape-recorded ops, plus
// uni- and bi-directional sequence runners.
//
//   rnn:  h' = tanh(W x + U h + b)
//   gru:  r = s(W_r x + U_r h + b_r), z = s(W_z x + U_z h + b_z)
//         n = tanh(W_n x + U_n (r * h) + b_n),  h' = (1 - z) * n + z * h
//   lstm: i, f, o = s(W_* x + U_* h + b_*), g = tanh(W_g x + U_g h + b_g)
//         c' = f * c + i * g,  h' = o * tanh(c')
//
// Weights are stored input-major: W [F x H], U [H x H], so x.W is a plain
// matmul over a [B x F] batch.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "deepself/tensor.hpp"

namespace deepself {

enum class CellKind { rnn, lstm, gru };
enum class Direction { uni, bi };

CellKind parse_cell_kind(std::string_view name);
std::string_view to_string(CellKind kind);
Direction parse_direction(std::string_view name);
std::string_view to_string(Direction direction);

/// Gate names in storage order: rnn {""}, gru {r, z, n}, lstm {i, f, g, o}.
std::vector<std::string> gate_names(CellKind kind);

template <typename T>
struct CellParams {
  CellKind kind = CellKind::gru;
  std::vector<BasicTensor<T>> input_weights;      // per gate, [F x H]
  std::vector<BasicTensor<T>> recurrent_weights;  // per gate, [H x H]
  std::vector<BasicTensor<T>> biases;             // per gate, [H]

  std::size_t input_size() const { return input_weights.front().dim(0); }
  std::size_t hidden_size() const { return recurrent_weights.front().dim(0); }
};

template <typename T>
struct CellState {
  BasicTensor<T> h;
  BasicTensor<T> c;  // LSTM only
};

/// Zero state for a batch.
template <typename T>
CellState<T> zero_state(const CellParams<T>& cell, std::size_t batch);

/// One step: x [B x F], previous state [B x H] -> next state.
template <typename T>
CellState<T> cell_step(const CellParams<T>& cell, const BasicTensor<T>& x, const CellState<T>& prev);

/// GRU step on hidden state only.
template <typename T>
BasicTensor<T> gru_cell(const CellParams<T>& cell, const BasicTensor<T>& x, const BasicTensor<T>& h);

template <typename T>
struct SequenceOutput {
  BasicTensor<T> outputs;  // [B x T x H] (uni) or [B x T x 2H] (bi)
  BasicTensor<T> final;    // [B x H] = h(T), or [B x 2H] = [h_fwd(T); h_bwd(1)]
};

/// Runs t = 1..T (or T..1 when reverse). seq is [B x T x F] or unbatched
/// [T x F]; unbatched input yields unbatched outputs.
template <typename T>
SequenceOutput<T> run_sequence(const CellParams<T>& cell, const BasicTensor<T>& seq, bool reverse = false);

/// Forward and backward passes with independent parameters; per-step outputs
/// are [h_fwd(t); h_bwd(t)].
template <typename T>
SequenceOutput<T> bidirectional_sequence(const CellParams<T>& forward, const CellParams<T>& backward,
                                         const BasicTensor<T>& seq);

}  // namespace deepself
