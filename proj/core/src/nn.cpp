#include "recap/nn.hpp"

#include <cmath>

#include "recap/errors.hpp"

namespace recap::ag {

Tensor init_weight(int rows, int cols, Rng& rng) {
  double s = 1.0 / std::sqrt(static_cast<double>(cols));
  return Tensor::uniform({rows, cols}, rng, s, true);
}

LstmCell::LstmCell(int input, int hidden, Rng& rng)
    : w(init_weight(4 * hidden, input + hidden, rng)),
      b(Tensor::zeros({4 * hidden}, true)),
      input_size(input),
      hidden_size(hidden) {}

LstmState lstm_zero_state(Tape& t, int hidden_size) {
  return {t.constant(Tensor::zeros({hidden_size})), t.constant(Tensor::zeros({hidden_size}))};
}

LstmState lstm_step(Tape& t, LstmCell& cell, Var x, LstmState prev) {
  if (x.value().rank() != 1 || x.value().dim(0) != cell.input_size) {
    throw DimError("lstm_step: input shape " + x.value().shape_str() + " does not match cell input " +
                   std::to_string(cell.input_size));
  }
  int H = cell.hidden_size;
  Var z = add(matmul(t.param(cell.w), concat({x, prev.h})), t.param(cell.b));
  Var i = sigmoid(slice(z, 0, H));
  Var f = sigmoid(slice(z, H, H));
  Var g = tanh(slice(z, 2 * H, H));
  Var o = sigmoid(slice(z, 3 * H, H));
  Var c = add(mul(f, prev.c), mul(i, g));
  Var h = mul(o, tanh(c));
  return {h, c};
}

Linear::Linear(int in, int out, Rng& rng)
    : w(init_weight(out, in, rng)), b(Tensor::zeros({out}, true)) {}

Var linear_apply(Tape& t, Linear& lin, Var x) {
  return add(matmul(t.param(lin.w), x), t.param(lin.b));
}

}  // namespace recap::ag
