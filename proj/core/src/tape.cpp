#include "recap/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "recap/errors.hpp"

namespace recap::ag {

const Tensor& Var::value() const { return tape_->value_of(id_); }

Var Tape::param(const Tensor& t) {
  auto it = keyed_.find(&t);
  if (it != keyed_.end()) return Var(this, it->second);
  Node node;
  node.value = t;
  node.needs_grad = t.requires_grad;
  nodes_.push_back(std::move(node));
  int id = static_cast<int>(nodes_.size()) - 1;
  keyed_.emplace(&t, id);
  return Var(this, id);
}

Var Tape::constant(Tensor t) {
  Node node;
  node.value = std::move(t);
  node.needs_grad = false;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::emit(Tensor value, std::vector<int> parents, BackwardFn back) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = false;
  for (int p : parents) {
    if (nodes_[static_cast<size_t>(p)].needs_grad) node.needs_grad = true;
  }
  node.parents = std::move(parents);
  node.back = std::move(back);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

std::vector<double>& Tape::grad_buf(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.empty()) n.grad.assign(static_cast<size_t>(n.value.numel()), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (!loss.valid() || loss.tape() != this) {
    throw UsageError("backward: loss is not on this tape");
  }
  if (!nodes_[static_cast<size_t>(loss.id())].value.is_scalar()) {
    throw UsageError("backward: loss must be scalar, got shape " +
                     nodes_[static_cast<size_t>(loss.id())].value.shape_str());
  }
  for (auto& n : nodes_) {
    std::fill(n.grad.begin(), n.grad.end(), 0.0);
  }
  grad_buf(loss.id())[0] = 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad || n.grad.empty() || !n.back) continue;
    n.back(*this, id);
  }
}

std::vector<double> Tape::grad(Var v) const {
  if (!v.valid() || v.tape() != this) throw UsageError("grad: var is not on this tape");
  const Node& n = nodes_[static_cast<size_t>(v.id())];
  if (n.grad.empty()) return std::vector<double>(static_cast<size_t>(n.value.numel()), 0.0);
  return n.grad;
}

GradMap Tape::param_grads() const {
  GradMap out;
  for (const auto& [tensor, id] : keyed_) {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad) continue;
    if (n.grad.empty()) {
      out.emplace(tensor, std::vector<double>(static_cast<size_t>(n.value.numel()), 0.0));
    } else {
      out.emplace(tensor, n.grad);
    }
  }
  return out;
}

static Tape& common_tape(const std::vector<Var>& vs, const char* op) {
  if (vs.empty()) throw UsageError(std::string(op) + ": no operands");
  Tape* t = nullptr;
  for (const Var& v : vs) {
    if (!v.valid()) throw UsageError(std::string(op) + ": invalid operand");
    if (t == nullptr) t = v.tape();
    if (v.tape() != t) throw UsageError(std::string(op) + ": operands on different tapes");
  }
  return *t;
}

static Tape& common_tape2(Var a, Var b, const char* op) { return common_tape({a, b}, op); }

Var add(Var a, Var b) {
  Tape& t = common_tape2(a, b, "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.same_shape(bv)) {
    std::vector<double> out(av.vec());
    for (int64_t i = 0; i < av.numel(); ++i) out[static_cast<size_t>(i)] += bv[i];
    int pa = a.id(), pb = b.id();
    return t.emit(Tensor(av.shape(), std::move(out)), {pa, pb}, [pa, pb](Tape& tp, int self) {
      const auto& g = tp.grad_buf(self);
      auto& ga = tp.grad_buf(pa);
      auto& gb = tp.grad_buf(pb);
      for (size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
        gb[i] += g[i];
      }
    });
  }
  if (av.rank() == 2 && bv.rank() == 1 && av.dim(1) == bv.dim(0)) {
    int m = av.dim(0), n = av.dim(1);
    std::vector<double> out(av.vec());
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] += bv[j];
    int pa = a.id(), pb = b.id();
    return t.emit(Tensor(av.shape(), std::move(out)), {pa, pb}, [pa, pb, m, n](Tape& tp, int self) {
      const auto& g = tp.grad_buf(self);
      auto& ga = tp.grad_buf(pa);
      auto& gb = tp.grad_buf(pb);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          ga[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(i) * n + j];
          gb[static_cast<size_t>(j)] += g[static_cast<size_t>(i) * n + j];
        }
    });
  }
  throw DimError("add: shapes " + av.shape_str() + " and " + bv.shape_str() + " do not conform");
}

Var sub(Var a, Var b) {
  Tape& t = common_tape2(a, b, "sub");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) {
    throw DimError("sub: shapes " + av.shape_str() + " and " + bv.shape_str() + " differ");
  }
  std::vector<double> out(av.vec());
  for (int64_t i = 0; i < av.numel(); ++i) out[static_cast<size_t>(i)] -= bv[i];
  int pa = a.id(), pb = b.id();
  return t.emit(Tensor(av.shape(), std::move(out)), {pa, pb}, [pa, pb](Tape& tp, int self) {
    const auto& g = tp.grad_buf(self);
    auto& ga = tp.grad_buf(pa);
    auto& gb = tp.grad_buf(pb);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = common_tape2(a, b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) {
    throw DimError("mul: shapes " + av.shape_str() + " and " + bv.shape_str() + " differ");
  }
  std::vector<double> out(static_cast<size_t>(av.numel()));
  for (int64_t i = 0; i < av.numel(); ++i) out[static_cast<size_t>(i)] = av[i] * bv[i];
  int pa = a.id(), pb = b.id();
  return t.emit(Tensor(av.shape(), std::move(out)), {pa, pb}, [pa, pb](Tape& tp, int self) {
    const auto& g = tp.grad_buf(self);
    const Tensor& avv = tp.value_of(pa);
    const Tensor& bvv = tp.value_of(pb);
    auto& ga = tp.grad_buf(pa);
    auto& gb = tp.grad_buf(pb);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * bvv[static_cast<int64_t>(i)];
      gb[i] += g[i] * avv[static_cast<int64_t>(i)];
    }
  });
}

Var div(Var a, Var b) {
  Tape& t = common_tape2(a, b, "div");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) {
    throw DimError("div: shapes " + av.shape_str() + " and " + bv.shape_str() + " differ");
  }
  std::vector<double> out(static_cast<size_t>(av.numel()));
  for (int64_t i = 0; i < av.numel(); ++i) out[static_cast<size_t>(i)] = av[i] / bv[i];
  check_finite(out, "div");
  int pa = a.id(), pb = b.id();
  return t.emit(Tensor(av.shape(), std::move(out)), {pa, pb}, [pa, pb](Tape& tp, int self) {
    const auto& g = tp.grad_buf(self);
    const Tensor& avv = tp.value_of(pa);
    const Tensor& bvv = tp.value_of(pb);
    auto& ga = tp.grad_buf(pa);
    auto& gb = tp.grad_buf(pb);
    for (size_t i = 0; i < g.size(); ++i) {
      double bi = bvv[static_cast<int64_t>(i)];
      ga[i] += g[i] / bi;
      gb[i] -= g[i] * avv[static_cast<int64_t>(i)] / (bi * bi);
    }
  });
}

Var scale(Var a, double c) {
  Tape& t = common_tape({a}, "scale");
  const Tensor& av = a.value();
  std::vector<double> out(static_cast<size_t>(av.numel()));
  for (int64_t i = 0; i < av.numel(); ++i) out[static_cast<size_t>(i)] = av[i] * c;
  check_finite(out, "scale");
  int pa = a.id();
  return t.emit(Tensor(av.shape(), std::move(out)), {pa}, [pa, c](Tape& tp, int self) {
    const auto& g = tp.grad_buf(self);
    auto& ga = tp.grad_buf(pa);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

Var add_const(Var a, double c) {
  Tape& t = common_tape({a}, "add_const");
  const Tensor& av = a.value();
  std::vector<double> out(static_cast<size_t>(av.numel()));
  for (int64_t i = 0; i < av.numel(); ++i) out[static_cast<size_t>(i)] = av[i] + c;
  check_finite(out, "add_const");
  int pa = a.id();
  return t.emit(Tensor(av.shape(), std::move(out)), {pa}, [pa](Tape& tp, int self) {
    const auto& g = tp.grad_buf(self);
    auto& ga = tp.grad_buf(pa);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var matmul(Var a, Var b) {
  Tape& t = common_tape2(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  int pa = a.id(), pb = b.id();

  if (av.rank() == 2 && bv.rank() == 2) {
    if (av.dim(1) != bv.dim(0)) {
      throw DimError("matmul: " + av.shape_str() + " x " + bv.shape_str() + " inner dims differ");
    }
    int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
      for (int l = 0; l < k; ++l) {
        double aval = av.at2(i, l);
        for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] += aval * bv.at2(l, j);
      }
    check_finite(out, "matmul");
    return t.emit(Tensor({m, n}, std::move(out)), {pa, pb}, [pa, pb, m, k, n](Tape& tp, int self) {
      const auto& g = tp.grad_buf(self);
      const Tensor& A = tp.value_of(pa);
      const Tensor& B = tp.value_of(pb);
      auto& ga = tp.grad_buf(pa);
      auto& gb = tp.grad_buf(pb);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          double gij = g[static_cast<size_t>(i) * n + j];
          for (int l = 0; l < k; ++l) {
            ga[static_cast<size_t>(i) * k + l] += gij * B.at2(l, j);
            gb[static_cast<size_t>(l) * n + j] += gij * A.at2(i, l);
          }
        }
    });
  }
  if (av.rank() == 2 && bv.rank() == 1) {
    if (av.dim(1) != bv.dim(0)) {
      throw DimError("matmul: " + av.shape_str() + " x " + bv.shape_str() + " inner dims differ");
    }
    int m = av.dim(0), k = av.dim(1);
    std::vector<double> out(static_cast<size_t>(m), 0.0);
    for (int i = 0; i < m; ++i) {
      double acc = 0.0;
      for (int l = 0; l < k; ++l) acc += av.at2(i, l) * bv[l];
      out[static_cast<size_t>(i)] = acc;
    }
    check_finite(out, "matmul");
    return t.emit(Tensor({m}, std::move(out)), {pa, pb}, [pa, pb, m, k](Tape& tp, int self) {
      const auto& g = tp.grad_buf(self);
      const Tensor& A = tp.value_of(pa);
      const Tensor& x = tp.value_of(pb);
      auto& ga = tp.grad_buf(pa);
      auto& gx = tp.grad_buf(pb);
      for (int i = 0; i < m; ++i) {
        double gi = g[static_cast<size_t>(i)];
        for (int l = 0; l < k; ++l) {
          ga[static_cast<size_t>(i) * k + l] += gi * x[l];
          gx[static_cast<size_t>(l)] += gi * A.at2(i, l);
        }
      }
    });
  }
  if (av.rank() == 1 && bv.rank() == 2) {
    if (av.dim(0) != bv.dim(0)) {
      throw DimError("matmul: " + av.shape_str() + " x " + bv.shape_str() + " inner dims differ");
    }
    int k = av.dim(0), n = bv.dim(1);
    std::vector<double> out(static_cast<size_t>(n), 0.0);
    for (int l = 0; l < k; ++l) {
      double xl = av[l];
      for (int j = 0; j < n; ++j) out[static_cast<size_t>(j)] += xl * bv.at2(l, j);
    }
    check_finite(out, "matmul");
    return t.emit(Tensor({n}, std::move(out)), {pa, pb}, [pa, pb, k, n](Tape& tp, int self) {
      const auto& g = tp.grad_buf(self);
      const Tensor& x = tp.value_of(pa);
      const Tensor& B = tp.value_of(pb);
      auto& gx = tp.grad_buf(pa);
      auto& gb = tp.grad_buf(pb);
      for (int l = 0; l < k; ++l)
        for (int j = 0; j < n; ++j) {
          gx[static_cast<size_t>(l)] += g[static_cast<size_t>(j)] * B.at2(l, j);
          gb[static_cast<size_t>(l) * n + j] += x[l] * g[static_cast<size_t>(j)];
        }
    });
  }
  throw DimError("matmul: unsupported ranks " + av.shape_str() + " x " + bv.shape_str());
}

Var concat(const std::vector<Var>& parts) {
  Tape& t = common_tape(parts, "concat");
  int total = 0;
  for (const Var& p : parts) {
    if (p.value().rank() != 1) {
      throw DimError("concat: expected rank-1 parts, got " + p.value().shape_str());
    }
    total += p.value().dim(0);
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(total));
  std::vector<int> ids;
  std::vector<int> lens;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    out.insert(out.end(), pv.vec().begin(), pv.vec().end());
    ids.push_back(p.id());
    lens.push_back(pv.dim(0));
  }
  return t.emit(Tensor({total}, std::move(out)), ids, [ids, lens](Tape& tp, int self) {
    const auto& g = tp.grad_buf(self);
    size_t off = 0;
    for (size_t p = 0; p < ids.size(); ++p) {
      auto& gp = tp.grad_buf(ids[p]);
      for (int i = 0; i < lens[p]; ++i) gp[static_cast<size_t>(i)] += g[off + static_cast<size_t>(i)];
      off += static_cast<size_t>(lens[p]);
    }
  });
}

Var pack(const std::vector<Var>& scalars) {
  Tape& t = common_tape(scalars, "pack");
  std::vector<double> out;
  out.reserve(scalars.size());
  std::vector<int> ids;
  ids.reserve(scalars.size());
  for (const Var& s : scalars) {
    if (!s.value().is_scalar()) {
      throw DimError("pack: expected scalar entries, got " + s.value().shape_str());
    }
    out.push_back(s.value().scalar_value());
    ids.push_back(s.id());
  }
  const int n = static_cast<int>(out.size());
  return t.emit(Tensor({n}, std::move(out)), ids,
                [ids](Tape& tp, int self) {
                  const auto& g = tp.grad_buf(self);
                  for (size_t i = 0; i < ids.size(); ++i) {
                    tp.grad_buf(ids[i])[0] += g[i];
                  }
                });
}

Var stack_rows(const std::vector<Var>& rows_in) {
  Tape& t = common_tape(rows_in, "stack_rows");
  int n = rows_in[0].value().rank() == 1 ? rows_in[0].value().dim(0) : -1;
  std::vector<double> out;
  std::vector<int> ids;
  ids.reserve(rows_in.size());
  for (const Var& r : rows_in) {
    if (r.value().rank() != 1 || r.value().dim(0) != n) {
      throw DimError("stack_rows: expected equal-length rank-1 rows, got " +
                     r.value().shape_str());
    }
    out.insert(out.end(), r.value().vec().begin(), r.value().vec().end());
    ids.push_back(r.id());
  }
  int m = static_cast<int>(rows_in.size());
  return t.emit(Tensor({m, n}, std::move(out)), ids, [ids, n](Tape& tp, int self) {
    const auto& g = tp.grad_buf(self);
    for (size_t r = 0; r < ids.size(); ++r) {
      auto& gr = tp.grad_buf(ids[r]);
      for (int j = 0; j < n; ++j) {
        gr[static_cast<size_t>(j)] += g[r * static_cast<size_t>(n) + static_cast<size_t>(j)];
      }
    }
  });
}

Var vscale(Var a, Var s) {
  Tape& t = common_tape2(a, s, "vscale");
  if (!s.value().is_scalar()) {
    throw DimError("vscale: scale factor must be scalar, got " + s.value().shape_str());
  }
  const Tensor& av = a.value();
  double sv = s.value().scalar_value();
  std::vector<double> out(static_cast<size_t>(av.numel()));
  for (int64_t i = 0; i < av.numel(); ++i) out[static_cast<size_t>(i)] = av[i] * sv;
  check_finite(out, "vscale");
  int pa = a.id(), ps = s.id();
  return t.emit(Tensor(av.shape(), std::move(out)), {pa, ps}, [pa, ps](Tape& tp, int self) {
    const auto& g = tp.grad_buf(self);
    const Tensor& avv = tp.value_of(pa);
    double svv = tp.value_of(ps).scalar_value();
    auto& ga = tp.grad_buf(pa);
    auto& gs = tp.grad_buf(ps);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * svv;
      gs[0] += g[i] * avv[static_cast<int64_t>(i)];
    }
  });
}

Var tanh(Var a) {
  Tape& t = common_tape({a}, "tanh");
  const Tensor& av = a.value();
  std::vector<double> out(static_cast<size_t>(av.numel()));
  for (int64_t i = 0; i < av.numel(); ++i) out[static_cast<size_t>(i)] = std::tanh(av[i]);
  int pa = a.id();
  return t.emit(Tensor(av.shape(), std::move(out)), {pa}, [pa](Tape& tp, int self) {
    const auto& g = tp.grad_buf(self);
    const Tensor& y = tp.value_of(self);
    auto& ga = tp.grad_buf(pa);
    for (size_t i = 0; i < g.size(); ++i) {
      double yi = y[static_cast<int64_t>(i)];
      ga[i] += g[i] * (1.0 - yi * yi);
    }
  });
}

Var sigmoid(Var a) {
  Tape& t = common_tape({a}, "sigmoid");
  const Tensor& av = a.value();
  std::vector<double> out(static_cast<size_t>(av.numel()));
  for (int64_t i = 0; i < av.numel(); ++i) {
    double x = av[i];
    out[static_cast<size_t>(i)] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  int pa = a.id();
  return t.emit(Tensor(av.shape(), std::move(out)), {pa}, [pa](Tape& tp, int self) {
    const auto& g = tp.grad_buf(self);
    const Tensor& y = tp.value_of(self);
    auto& ga = tp.grad_buf(pa);
    for (size_t i = 0; i < g.size(); ++i) {
      double yi = y[static_cast<int64_t>(i)];
      ga[i] += g[i] * yi * (1.0 - yi);
    }
  });
}

Var relu(Var a) {
  Tape& t = common_tape({a}, "relu");
  const Tensor& av = a.value();
  std::vector<double> out(static_cast<size_t>(av.numel()));
  for (int64_t i = 0; i < av.numel(); ++i) out[static_cast<size_t>(i)] = av[i] > 0.0 ? av[i] : 0.0;
  int pa = a.id();
  return t.emit(Tensor(av.shape(), std::move(out)), {pa}, [pa](Tape& tp, int self) {
    const auto& g = tp.grad_buf(self);
    const Tensor& x = tp.value_of(pa);
    auto& ga = tp.grad_buf(pa);
    for (size_t i = 0; i < g.size(); ++i) {
      if (x[static_cast<int64_t>(i)] > 0.0) ga[i] += g[i];
    }
  });
}

Var softmax(Var a) {
  Tape& t = common_tape({a}, "softmax");
  const Tensor& av = a.value();
  if (av.rank() != 1 && av.rank() != 2) {
    throw DimError("softmax: expected rank 1 or 2, got " + av.shape_str());
  }
  int rows_n = av.rank() == 2 ? av.dim(0) : 1;
  int cols = av.rank() == 2 ? av.dim(1) : av.dim(0);
  std::vector<double> out(static_cast<size_t>(av.numel()));
  for (int r = 0; r < rows_n; ++r) {
    const double* in = av.data() + static_cast<size_t>(r) * cols;
    double* o = out.data() + static_cast<size_t>(r) * cols;
    double mx = in[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
    double denom = 0.0;
    for (int j = 0; j < cols; ++j) {
      o[j] = std::exp(in[j] - mx);
      denom += o[j];
    }
    for (int j = 0; j < cols; ++j) o[j] /= denom;
  }
  int pa = a.id();
  return t.emit(Tensor(av.shape(), std::move(out)), {pa}, [pa, rows_n, cols](Tape& tp, int self) {
    const auto& g = tp.grad_buf(self);
    const Tensor& y = tp.value_of(self);
    auto& ga = tp.grad_buf(pa);
    for (int r = 0; r < rows_n; ++r) {
      size_t base = static_cast<size_t>(r) * cols;
      double inner = 0.0;
      for (int j = 0; j < cols; ++j) inner += g[base + j] * y[static_cast<int64_t>(base) + j];
      for (int j = 0; j < cols; ++j) {
        double yj = y[static_cast<int64_t>(base) + j];
        ga[base + j] += yj * (g[base + j] - inner);
      }
    }
  });
}

Var sum(Var a) {
  Tape& t = common_tape({a}, "sum");
  const Tensor& av = a.value();
  double acc = 0.0;
  for (int64_t i = 0; i < av.numel(); ++i) acc += av[i];
  check_finite({acc}, "sum");
  int pa = a.id();
  return t.emit(Tensor::scalar(acc), {pa}, [pa](Tape& tp, int self) {
    double g = tp.grad_buf(self)[0];
    auto& ga = tp.grad_buf(pa);
    for (auto& v : ga) v += g;
  });
}

Var mean(Var a) {
  Tape& t = common_tape({a}, "mean");
  const Tensor& av = a.value();
  double acc = 0.0;
  for (int64_t i = 0; i < av.numel(); ++i) acc += av[i];
  double n = static_cast<double>(av.numel());
  int pa = a.id();
  return t.emit(Tensor::scalar(acc / n), {pa}, [pa, n](Tape& tp, int self) {
    double g = tp.grad_buf(self)[0] / n;
    auto& ga = tp.grad_buf(pa);
    for (auto& v : ga) v += g;
  });
}

Var max_reduce(Var a) {
  Tape& t = common_tape({a}, "max_reduce");
  const Tensor& av = a.value();
  int64_t best = 0;
  for (int64_t i = 1; i < av.numel(); ++i) {
    if (av[i] > av[best]) best = i;
  }
  int pa = a.id();
  return t.emit(Tensor::scalar(av[best]), {pa}, [pa, best](Tape& tp, int self) {
    tp.grad_buf(pa)[static_cast<size_t>(best)] += tp.grad_buf(self)[0];
  });
}

Var row(Var table, int r) {
  Tape& t = common_tape({table}, "row");
  const Tensor& tv = table.value();
  if (tv.rank() != 2) throw DimError("row: expected rank-2 table, got " + tv.shape_str());
  if (r < 0 || r >= tv.dim(0)) {
    throw UsageError("row: index " + std::to_string(r) + " out of range for " + tv.shape_str());
  }
  int n = tv.dim(1);
  std::vector<double> out(tv.vec().begin() + static_cast<size_t>(r) * n,
                          tv.vec().begin() + (static_cast<size_t>(r) + 1) * n);
  int pa = table.id();
  return t.emit(Tensor({n}, std::move(out)), {pa}, [pa, r, n](Tape& tp, int self) {
    const auto& g = tp.grad_buf(self);
    auto& ga = tp.grad_buf(pa);
    for (int j = 0; j < n; ++j) ga[static_cast<size_t>(r) * n + j] += g[static_cast<size_t>(j)];
  });
}

Var rows(Var table, const std::vector<int>& ids) {
  Tape& t = common_tape({table}, "rows");
  const Tensor& tv = table.value();
  if (tv.rank() != 2) throw DimError("rows: expected rank-2 table, got " + tv.shape_str());
  if (ids.empty()) throw UsageError("rows: empty id list");
  int n = tv.dim(1);
  std::vector<double> out;
  out.reserve(ids.size() * static_cast<size_t>(n));
  for (int id : ids) {
    if (id < 0 || id >= tv.dim(0)) {
      throw UsageError("rows: index " + std::to_string(id) + " out of range for " + tv.shape_str());
    }
    out.insert(out.end(), tv.vec().begin() + static_cast<size_t>(id) * n,
               tv.vec().begin() + (static_cast<size_t>(id) + 1) * n);
  }
  int pa = table.id();
  std::vector<int> ids_copy = ids;
  return t.emit(Tensor({static_cast<int>(ids.size()), n}, std::move(out)), {pa},
                [pa, ids_copy, n](Tape& tp, int self) {
                  const auto& g = tp.grad_buf(self);
                  auto& ga = tp.grad_buf(pa);
                  for (size_t r = 0; r < ids_copy.size(); ++r) {
                    for (int j = 0; j < n; ++j) {
                      ga[static_cast<size_t>(ids_copy[r]) * n + j] += g[r * static_cast<size_t>(n) + j];
                    }
                  }
                });
}

Var at(Var v, int i) {
  Tape& t = common_tape({v}, "at");
  const Tensor& vv = v.value();
  if (vv.rank() != 1) throw DimError("at: expected rank-1, got " + vv.shape_str());
  if (i < 0 || i >= vv.dim(0)) {
    throw UsageError("at: index " + std::to_string(i) + " out of range for " + vv.shape_str());
  }
  int pa = v.id();
  return t.emit(Tensor::scalar(vv[i]), {pa}, [pa, i](Tape& tp, int self) {
    tp.grad_buf(pa)[static_cast<size_t>(i)] += tp.grad_buf(self)[0];
  });
}

Var slice(Var v, int start, int len) {
  Tape& t = common_tape({v}, "slice");
  const Tensor& vv = v.value();
  if (vv.rank() != 1) throw DimError("slice: expected rank-1, got " + vv.shape_str());
  if (start < 0 || len <= 0 || start + len > vv.dim(0)) {
    throw UsageError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") out of bounds for " + vv.shape_str());
  }
  std::vector<double> out(vv.vec().begin() + start, vv.vec().begin() + start + len);
  int pa = v.id();
  return t.emit(Tensor({len}, std::move(out)), {pa}, [pa, start, len](Tape& tp, int self) {
    const auto& g = tp.grad_buf(self);
    auto& ga = tp.grad_buf(pa);
    for (int j = 0; j < len; ++j) ga[static_cast<size_t>(start + j)] += g[static_cast<size_t>(j)];
  });
}

Var scatter(int size, const std::vector<int>& ids, Var values) {
  Tape& t = common_tape({values}, "scatter");
  const Tensor& vv = values.value();
  if (vv.rank() != 1 || static_cast<size_t>(vv.dim(0)) != ids.size()) {
    throw DimError("scatter: values shape " + vv.shape_str() + " does not match " +
                   std::to_string(ids.size()) + " ids");
  }
  std::vector<double> out(static_cast<size_t>(size), 0.0);
  std::vector<char> seen(static_cast<size_t>(size), 0);
  for (size_t j = 0; j < ids.size(); ++j) {
    int id = ids[j];
    if (id < 0 || id >= size) {
      throw UsageError("scatter: id " + std::to_string(id) + " out of range [0," +
                       std::to_string(size) + ")");
    }
    if (seen[static_cast<size_t>(id)]) {
      throw UsageError("scatter: duplicate id " + std::to_string(id));
    }
    seen[static_cast<size_t>(id)] = 1;
    out[static_cast<size_t>(id)] = vv[static_cast<int64_t>(j)];
  }
  int pa = values.id();
  std::vector<int> ids_copy = ids;
  return t.emit(Tensor({size}, std::move(out)), {pa}, [pa, ids_copy](Tape& tp, int self) {
    const auto& g = tp.grad_buf(self);
    auto& ga = tp.grad_buf(pa);
    for (size_t j = 0; j < ids_copy.size(); ++j) {
      ga[j] += g[static_cast<size_t>(ids_copy[j])];
    }
  });
}

Var log_clamped(Var a, double floor) {
  Tape& t = common_tape({a}, "log_clamped");
  const Tensor& av = a.value();
  std::vector<double> out(static_cast<size_t>(av.numel()));
  for (int64_t i = 0; i < av.numel(); ++i) {
    out[static_cast<size_t>(i)] = std::log(std::max(av[i], floor));
  }
  int pa = a.id();
  return t.emit(Tensor(av.shape(), std::move(out)), {pa}, [pa, floor](Tape& tp, int self) {
    const auto& g = tp.grad_buf(self);
    const Tensor& x = tp.value_of(pa);
    auto& ga = tp.grad_buf(pa);
    for (size_t i = 0; i < g.size(); ++i) {
      double xi = x[static_cast<int64_t>(i)];
      if (xi > floor) ga[i] += g[i] / xi;
    }
  });
}

Var sqrt(Var a) {
  Tape& t = common_tape({a}, "sqrt");
  const Tensor& av = a.value();
  std::vector<double> out(static_cast<size_t>(av.numel()));
  for (int64_t i = 0; i < av.numel(); ++i) {
    if (av[i] < 0.0) throw NumericError("sqrt: negative input");
    out[static_cast<size_t>(i)] = std::sqrt(av[i]);
  }
  int pa = a.id();
  return t.emit(Tensor(av.shape(), std::move(out)), {pa}, [pa](Tape& tp, int self) {
    const auto& g = tp.grad_buf(self);
    const Tensor& y = tp.value_of(self);
    auto& ga = tp.grad_buf(pa);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] / (2.0 * y[static_cast<int64_t>(i)]);
    }
  });
}

Var dot(Var a, Var b) { return sum(mul(a, b)); }

double grad_check(const TapeFn& f, const std::vector<Tensor>& point, double h) {
  std::vector<Tensor> pts = point;
  for (auto& t : pts) t.requires_grad = true;

  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(pts.size());
  for (auto& t : pts) leaves.push_back(tape.param(t));
  Var loss = f(tape, leaves);
  if (!loss.value().is_scalar()) throw UsageError("grad_check: f must be scalar-valued");
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& lv : leaves) analytic.push_back(tape.grad(lv));

  auto eval_at = [&f](std::vector<Tensor>& at) {
    Tape t2;
    std::vector<Var> ls;
    ls.reserve(at.size());
    for (auto& t : at) ls.push_back(t2.param(t));
    return f(t2, ls).value().scalar_value();
  };

  double worst = 0.0;
  for (size_t p = 0; p < pts.size(); ++p) {
    for (int64_t i = 0; i < pts[p].numel(); ++i) {
      std::vector<Tensor> work = pts;
      for (auto& t : work) t.requires_grad = false;
      double orig = work[p][i];
      work[p][i] = orig + h;
      double up = eval_at(work);
      work[p][i] = orig - h;
      double down = eval_at(work);
      work[p][i] = orig;
      double numeric = (up - down) / (2.0 * h);
      double a = analytic[p][static_cast<size_t>(i)];
      double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace recap::ag
