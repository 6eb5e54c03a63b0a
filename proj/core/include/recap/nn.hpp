#pragma once

#include <vector>

#include "recap/tape.hpp"

namespace recap::ag {

// Fused LSTM parameters: w is [4H, in+H] over the concatenated [x; h_prev],
// b is [4H]. Gate order along the first axis is input, forget, cell, output.
struct LstmCell {
  Tensor w;
  Tensor b;
  int input_size = 0;
  int hidden_size = 0;

  LstmCell() = default;
  LstmCell(int input, int hidden, Rng& rng);

  std::vector<Tensor*> tensors() { return {&w, &b}; }
};

struct LstmState {
  Var h;
  Var c;
};

// One step: gates = w [x; h_prev] + b, c = f*c_prev + i*g, h = o*tanh(c).
LstmState lstm_step(Tape& t, LstmCell& cell, Var x, LstmState prev);

// Zero initial state for one sequence.
LstmState lstm_zero_state(Tape& t, int hidden_size);

// Affine map y = w x + b with w [out, in], b [out].
struct Linear {
  Tensor w;
  Tensor b;

  Linear() = default;
  Linear(int in, int out, Rng& rng);

  std::vector<Tensor*> tensors() { return {&w, &b}; }
};

Var linear_apply(Tape& t, Linear& lin, Var x);

// Uniform(-s, s) with s = 1/sqrt(fan_in); biases start at zero.
Tensor init_weight(int rows, int cols, Rng& rng);

}  // namespace recap::ag
