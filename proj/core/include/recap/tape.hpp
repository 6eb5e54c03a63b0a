#pragma once

#include <functional>
#include <span>
#include <unordered_map>
#include <deque>
#include <vector>

#include "recap/tensor.hpp"

namespace recap::ag {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid for the lifetime
// of its tape.
class Var {
 public:
  Var() = default;
  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  const std::vector<int>& shape() const { return value().shape(); }
  double scalar_value() const { return value().scalar_value(); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Gradients of registered parameter leaves, keyed by the Tensor they were
// registered from.
using GradMap = std::unordered_map<const Tensor*, std::vector<double>>;

// Records primitive operations in execution order so that a single reverse
// sweep visits every node exactly once, after all of its consumers. A tape
// and its vars are confined to one thread; independent tapes may run in
// parallel.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers `t` as a leaf keyed by its address; repeated calls with the
  // same tensor return the same node. Gradient is tracked iff t.requires_grad.
  Var param(const Tensor& t);
  // Unkeyed constant leaf, never differentiated.
  Var constant(Tensor t);
  Var constant(double v) { return constant(Tensor::scalar(v)); }

  // Reverse sweep from `loss` (must be scalar, seed gradient 1.0). Fills
  // per-node gradient accumulators; query them with grad()/param_grads().
  void backward(Var loss);

  // Gradient of the last backward() w.r.t. any node (zeros if unreached).
  std::vector<double> grad(Var v) const;
  // Gradients for every param() leaf that requires grad.
  GradMap param_grads() const;

  size_t size() const { return nodes_.size(); }

  // --- internal plumbing for the primitive ops ---
  using BackwardFn = std::function<void(Tape&, int self)>;
  Var emit(Tensor value, std::vector<int> parents, BackwardFn back);
  const Tensor& value_of(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  std::vector<double>& grad_buf(int id);
  bool node_requires(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;  // allocated lazily during backward
    bool needs_grad = false;
    std::vector<int> parents;
    BackwardFn back;
  };
  std::deque<Node> nodes_;  // deque: references to nodes stay valid as the tape grows
  std::unordered_map<const Tensor*, int> keyed_;
};

// --- primitive operations -------------------------------------------------
// Elementwise add; also rank-2 [m,n] + rank-1 [n] bias over the last axis.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise, same shape
Var div(Var a, Var b);  // elementwise, same shape
Var scale(Var a, double c);
Var add_const(Var a, double c);
// [m,k]x[k,n] -> [m,n]; [m,k]x[k] -> [m]; [k]x[k,n] -> [n].
Var matmul(Var a, Var b);
Var concat(const std::vector<Var>& parts);  // rank-1 vectors
Var pack(const std::vector<Var>& scalars);      // rank-0 entries -> rank-1
Var stack_rows(const std::vector<Var>& rows);   // equal-length rank-1 -> rank-2
Var vscale(Var a, Var s);                       // tensor a times rank-0 scalar s
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);  // max(x,0), subgradient 0 at the kink
// Softmax over the last axis (rank 1 or 2), computed with max subtraction.
Var softmax(Var a);
Var sum(Var a);
Var mean(Var a);
Var max_reduce(Var a);  // subgradient to the first argmax
Var row(Var table, int r);                         // rank-2 -> rank-1
Var rows(Var table, const std::vector<int>& ids);  // embedding lookup -> rank-2
Var at(Var v, int i);                              // rank-1 element -> rank-0
Var slice(Var v, int start, int len);              // rank-1 sub-vector
// Rank-1 vector of `size` zeros with values[j] placed at ids[j]; ids distinct.
Var scatter(int size, const std::vector<int>& ids, Var values);
// log(max(a, floor)) elementwise; zero gradient where the floor is active.
Var log_clamped(Var a, double floor = 1e-12);
Var sqrt(Var a);
Var dot(Var a, Var b);  // sum(mul(a, b)) over rank-1

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }

// --- gradient checking ----------------------------------------------------
// Builds f on a fresh tape with `point` as parameter leaves, compares the
// analytic gradient against central finite differences with step h, and
// returns max over coordinates of |analytic - numeric| /
// max(|analytic|, |numeric|, 1e-8). f must produce a scalar.
using TapeFn = std::function<Var(Tape&, const std::vector<Var>&)>;
double grad_check(const TapeFn& f, const std::vector<Tensor>& point, double h = 1e-5);

}  // namespace recap::ag
