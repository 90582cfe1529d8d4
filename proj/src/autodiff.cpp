#include "dgpvae/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace dgpvae {

namespace {

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": " + detail);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    shape_error(op, "shape mismatch (" + shape_to_string(a.shape) + " vs " +
                        shape_to_string(b.shape) + ")");
  }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    shape_error(op, "expected rank-" + std::to_string(rank) + " input, got shape " +
                        shape_to_string(t.shape));
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// y (n x m) = a (n x k) * b (k x m)
void gemm_nn(const Tensor& a, const Tensor& b, Tensor& y) {
  std::size_t n = a.shape[0], k = a.shape[1], m = b.shape[1];
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double av = a(i, p);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) y(i, j) += av * b(p, j);
    }
  }
}

// y (n x k) += g (n x m) * b^T (m x k)  i.e. y += g * b^T
void gemm_nt_add(const Tensor& g, const Tensor& b, Tensor& y) {
  std::size_t n = g.shape[0], m = g.shape[1], k = b.shape[0];
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double acc = 0.0;
      for (std::size_t j = 0; j < m; ++j) acc += g(i, j) * b(p, j);
      y(i, p) += acc;
    }
  }
}

// y (k x m) += a^T (k x n) * g (n x m)
void gemm_tn_add(const Tensor& a, const Tensor& g, Tensor& y) {
  std::size_t n = a.shape[0], k = a.shape[1], m = g.shape[1];
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double av = a(i, p);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) y(p, j) += av * g(i, j);
    }
  }
}

// Back-substitution for upper bidiagonal B (diag d, superdiag s): B x = r.
void solve_upper(const double* d, const double* s, const double* r, double* x, std::size_t t_len,
                 std::size_t cols) {
  for (std::size_t c = 0; c < cols; ++c) {
    x[(t_len - 1) * cols + c] = r[(t_len - 1) * cols + c] / d[t_len - 1];
  }
  for (std::size_t t = t_len - 1; t-- > 0;) {
    for (std::size_t c = 0; c < cols; ++c) {
      x[t * cols + c] = (r[t * cols + c] - s[t] * x[(t + 1) * cols + c]) / d[t];
    }
  }
}

// Forward substitution for B^T (lower bidiagonal): B^T x = r.
void solve_lower(const double* d, const double* s, const double* r, double* x, std::size_t t_len,
                 std::size_t cols) {
  for (std::size_t c = 0; c < cols; ++c) x[c] = r[c] / d[0];
  for (std::size_t t = 1; t < t_len; ++t) {
    for (std::size_t c = 0; c < cols; ++c) {
      x[t * cols + c] = (r[t * cols + c] - s[t - 1] * x[(t - 1) * cols + c]) / d[t];
    }
  }
}

}  // namespace

Var Tape::push(const char* op, Tensor value, std::vector<int> inputs,
               std::function<void(Tape&, int)> back) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.back = std::move(back);
  n.requires_grad = any_requires_grad(n.inputs);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node_at(int id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size())) {
    throw std::logic_error("Tape: invalid node handle " + std::to_string(id));
  }
  return nodes_[id];
}

bool Tape::any_requires_grad(const std::vector<int>& ids) const {
  for (int id : ids) {
    if (node_at(id).requires_grad) return true;
  }
  return false;
}

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[id];
  if (n.grad.values.empty()) n.grad = Tensor::zeros(n.value.shape);
  return n.grad;
}

void Tape::accumulate(int id, const Tensor& g) {
  if (!nodes_[id].requires_grad) return;
  Tensor& buf = grad_buf(id);
  for (std::size_t i = 0; i < g.values.size(); ++i) buf.values[i] += g.values[i];
}

void Tape::accumulate_scaled(int id, const Tensor& g, double c) {
  if (!nodes_[id].requires_grad) return;
  Tensor& buf = grad_buf(id);
  for (std::size_t i = 0; i < g.values.size(); ++i) buf.values[i] += c * g.values[i];
}

Var Tape::constant(Tensor value) { return push("constant", std::move(value), {}, nullptr); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Var v = push("leaf", std::move(value), {}, nullptr);
  nodes_[v.id].requires_grad = requires_grad;
  return v;
}

Var Tape::param(Parameter& p) {
  Var v = push("param", p.value, {}, [](Tape& t, int self) {
    Node& n = t.nodes_[self];
    Tensor& pg = n.parameter->grad;
    for (std::size_t i = 0; i < n.grad.values.size(); ++i) pg.values[i] += n.grad.values[i];
  });
  nodes_[v.id].requires_grad = true;
  nodes_[v.id].parameter = &p;
  return v;
}

const Tensor& Tape::value(Var v) const { return node_at(v.id).value; }

Tensor Tape::grad(Var v) const {
  const Node& n = node_at(v.id);
  if (n.grad.values.empty()) return Tensor::zeros(n.value.shape);
  return n.grad;
}

Var Tape::add(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require_same_shape("add", ta, tb);
  Tensor out = ta;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += tb.values[i];
  return push("add", std::move(out), {a.id, b.id}, [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    t.accumulate(n.inputs[0], n.grad);
    t.accumulate(n.inputs[1], n.grad);
  });
}

Var Tape::sub(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require_same_shape("sub", ta, tb);
  Tensor out = ta;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= tb.values[i];
  return push("sub", std::move(out), {a.id, b.id}, [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    t.accumulate(n.inputs[0], n.grad);
    t.accumulate_scaled(n.inputs[1], n.grad, -1.0);
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require_same_shape("mul", ta, tb);
  Tensor out = ta;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= tb.values[i];
  return push("mul", std::move(out), {a.id, b.id}, [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    const Tensor& va = t.nodes_[n.inputs[0]].value;
    const Tensor& vb = t.nodes_[n.inputs[1]].value;
    if (t.nodes_[n.inputs[0]].requires_grad) {
      Tensor& ga = t.grad_buf(n.inputs[0]);
      for (std::size_t i = 0; i < ga.values.size(); ++i) ga.values[i] += n.grad.values[i] * vb.values[i];
    }
    if (t.nodes_[n.inputs[1]].requires_grad) {
      Tensor& gb = t.grad_buf(n.inputs[1]);
      for (std::size_t i = 0; i < gb.values.size(); ++i) gb.values[i] += n.grad.values[i] * va.values[i];
    }
  });
}

Var Tape::scale(Var a, double c) {
  Tensor out = value(a);
  for (double& v : out.values) v *= c;
  return push("scale", std::move(out), {a.id}, [c](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    t.accumulate_scaled(n.inputs[0], n.grad, c);
  });
}

Var Tape::add_scalar(Var a, double c) {
  Tensor out = value(a);
  for (double& v : out.values) v += c;
  return push("add_scalar", std::move(out), {a.id}, [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    t.accumulate(n.inputs[0], n.grad);
  });
}

Var Tape::add_bias(Var mat, Var bias) {
  const Tensor& m = value(mat);
  const Tensor& b = value(bias);
  require_rank("add_bias", m, 2);
  if (b.rank() != 1 || b.shape[0] != m.shape[1]) {
    shape_error("add_bias", "bias " + shape_to_string(b.shape) + " does not match matrix " +
                                shape_to_string(m.shape));
  }
  Tensor out = m;
  for (std::size_t i = 0; i < m.shape[0]; ++i) {
    for (std::size_t j = 0; j < m.shape[1]; ++j) out(i, j) += b(j);
  }
  return push("add_bias", std::move(out), {mat.id, bias.id}, [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    t.accumulate(n.inputs[0], n.grad);
    if (t.nodes_[n.inputs[1]].requires_grad) {
      Tensor& gb = t.grad_buf(n.inputs[1]);
      std::size_t rows = n.value.shape[0], cols = n.value.shape[1];
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) gb(j) += n.grad(i, j);
      }
    }
  });
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require_rank("matmul", ta, 2);
  require_rank("matmul", tb, 2);
  if (ta.shape[1] != tb.shape[0]) {
    shape_error("matmul", "inner dimensions differ (" + shape_to_string(ta.shape) + " vs " +
                              shape_to_string(tb.shape) + ")");
  }
  Tensor out = Tensor::zeros({ta.shape[0], tb.shape[1]});
  gemm_nn(ta, tb, out);
  return push("matmul", std::move(out), {a.id, b.id}, [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    const Tensor& va = t.nodes_[n.inputs[0]].value;
    const Tensor& vb = t.nodes_[n.inputs[1]].value;
    if (t.nodes_[n.inputs[0]].requires_grad) gemm_nt_add(n.grad, vb, t.grad_buf(n.inputs[0]));
    if (t.nodes_[n.inputs[1]].requires_grad) gemm_tn_add(va, n.grad, t.grad_buf(n.inputs[1]));
  });
}

Var Tape::relu(Var a) {
  Tensor out = value(a);
  for (double& v : out.values) v = v > 0.0 ? v : 0.0;
  return push("relu", std::move(out), {a.id}, [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    if (!t.nodes_[n.inputs[0]].requires_grad) return;
    const Tensor& x = t.nodes_[n.inputs[0]].value;
    Tensor& g = t.grad_buf(n.inputs[0]);
    for (std::size_t i = 0; i < g.values.size(); ++i) {
      if (x.values[i] > 0.0) g.values[i] += n.grad.values[i];
    }
  });
}

Var Tape::softplus(Var a) {
  Tensor out = value(a);
  for (double& v : out.values) {
    v = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  }
  return push("softplus", std::move(out), {a.id}, [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    if (!t.nodes_[n.inputs[0]].requires_grad) return;
    const Tensor& x = t.nodes_[n.inputs[0]].value;
    Tensor& g = t.grad_buf(n.inputs[0]);
    for (std::size_t i = 0; i < g.values.size(); ++i) {
      g.values[i] += n.grad.values[i] * stable_sigmoid(x.values[i]);
    }
  });
}

Var Tape::log(Var a) {
  Tensor out = value(a);
  for (double& v : out.values) {
    if (v <= 0.0) shape_error("log", "non-positive input " + std::to_string(v));
    v = std::log(v);
  }
  return push("log", std::move(out), {a.id}, [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    if (!t.nodes_[n.inputs[0]].requires_grad) return;
    const Tensor& x = t.nodes_[n.inputs[0]].value;
    Tensor& g = t.grad_buf(n.inputs[0]);
    for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] += n.grad.values[i] / x.values[i];
  });
}

Var Tape::sum(Var a) {
  const Tensor& ta = value(a);
  double acc = 0.0;
  for (double v : ta.values) acc += v;
  return push("sum", Tensor::scalar(acc), {a.id}, [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    if (!t.nodes_[n.inputs[0]].requires_grad) return;
    Tensor& g = t.grad_buf(n.inputs[0]);
    double seed = n.grad.values[0];
    for (double& v : g.values) v += seed;
  });
}

Var Tape::mean(Var a) {
  const Tensor& ta = value(a);
  if (ta.numel() == 0) shape_error("mean", "empty input");
  double acc = 0.0;
  for (double v : ta.values) acc += v;
  double inv = 1.0 / static_cast<double>(ta.numel());
  return push("mean", Tensor::scalar(acc * inv), {a.id}, [inv](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    if (!t.nodes_[n.inputs[0]].requires_grad) return;
    Tensor& g = t.grad_buf(n.inputs[0]);
    double seed = n.grad.values[0] * inv;
    for (double& v : g.values) v += seed;
  });
}

Var Tape::reshape(Var a, std::vector<std::size_t> shape) {
  const Tensor& ta = value(a);
  Tensor out(std::move(shape), ta.values);  // validates element count
  return push("reshape", std::move(out), {a.id}, [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    if (!t.nodes_[n.inputs[0]].requires_grad) return;
    Tensor& g = t.grad_buf(n.inputs[0]);
    for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] += n.grad.values[i];
  });
}

Var Tape::transpose(Var a) {
  const Tensor& ta = value(a);
  require_rank("transpose", ta, 2);
  std::size_t r = ta.shape[0], c = ta.shape[1];
  Tensor out = Tensor::zeros({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out(j, i) = ta(i, j);
  }
  return push("transpose", std::move(out), {a.id}, [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    if (!t.nodes_[n.inputs[0]].requires_grad) return;
    Tensor& g = t.grad_buf(n.inputs[0]);
    std::size_t r = g.shape[0], c = g.shape[1];
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) g(i, j) += n.grad(j, i);
    }
  });
}

Var Tape::slice_rows(Var a, std::size_t r0, std::size_t r1) {
  const Tensor& ta = value(a);
  if (ta.rank() < 1 || ta.rank() > 2) {
    shape_error("slice_rows", "expected rank 1 or 2, got " + shape_to_string(ta.shape));
  }
  if (r0 > r1 || r1 > ta.shape[0]) {
    shape_error("slice_rows", "row range [" + std::to_string(r0) + ", " + std::to_string(r1) +
                                  ") out of bounds for shape " + shape_to_string(ta.shape));
  }
  std::size_t stride = ta.rank() == 2 ? ta.shape[1] : 1;
  std::vector<std::size_t> out_shape = ta.shape;
  out_shape[0] = r1 - r0;
  Tensor out = Tensor::zeros(out_shape);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = ta.values[r0 * stride + i];
  return push("slice_rows", std::move(out), {a.id}, [r0, stride](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    if (!t.nodes_[n.inputs[0]].requires_grad) return;
    Tensor& g = t.grad_buf(n.inputs[0]);
    for (std::size_t i = 0; i < n.grad.values.size(); ++i) {
      g.values[r0 * stride + i] += n.grad.values[i];
    }
  });
}

Var Tape::slice_cols(Var a, std::size_t c0, std::size_t c1) {
  const Tensor& ta = value(a);
  require_rank("slice_cols", ta, 2);
  if (c0 > c1 || c1 > ta.shape[1]) {
    shape_error("slice_cols", "column range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                                  ") out of bounds for shape " + shape_to_string(ta.shape));
  }
  std::size_t rows = ta.shape[0], width = c1 - c0;
  Tensor out = Tensor::zeros({rows, width});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < width; ++j) out(i, j) = ta(i, c0 + j);
  }
  return push("slice_cols", std::move(out), {a.id}, [c0](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    if (!t.nodes_[n.inputs[0]].requires_grad) return;
    Tensor& g = t.grad_buf(n.inputs[0]);
    std::size_t rows = n.grad.shape[0], width = n.grad.shape[1];
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < width; ++j) g(i, c0 + j) += n.grad(i, j);
    }
  });
}

Var Tape::gather_rows(Var a, std::vector<std::size_t> indices) {
  const Tensor& ta = value(a);
  if (ta.rank() < 1 || ta.rank() > 2) {
    shape_error("gather_rows", "expected rank 1 or 2, got " + shape_to_string(ta.shape));
  }
  for (std::size_t idx : indices) {
    if (idx >= ta.shape[0]) {
      shape_error("gather_rows", "index " + std::to_string(idx) + " out of bounds for shape " +
                                     shape_to_string(ta.shape));
    }
  }
  std::size_t stride = ta.rank() == 2 ? ta.shape[1] : 1;
  std::vector<std::size_t> out_shape = ta.shape;
  out_shape[0] = indices.size();
  Tensor out = Tensor::zeros(out_shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    for (std::size_t j = 0; j < stride; ++j) {
      out.values[i * stride + j] = ta.values[indices[i] * stride + j];
    }
  }
  return push("gather_rows", std::move(out), {a.id},
              [idx = std::move(indices), stride](Tape& t, int self) {
                const Node& n = t.nodes_[self];
                if (!t.nodes_[n.inputs[0]].requires_grad) return;
                Tensor& g = t.grad_buf(n.inputs[0]);
                for (std::size_t i = 0; i < idx.size(); ++i) {
                  for (std::size_t j = 0; j < stride; ++j) {
                    g.values[idx[i] * stride + j] += n.grad.values[i * stride + j];
                  }
                }
              });
}

Var Tape::concat_cols(const std::vector<Var>& cols) {
  if (cols.empty()) shape_error("concat_cols", "no inputs");
  std::size_t rows = value(cols[0]).shape[0];
  std::vector<int> ids;
  for (Var c : cols) {
    const Tensor& tc = value(c);
    if (tc.numel() != rows || tc.shape[0] != rows) {
      shape_error("concat_cols", "expected length-" + std::to_string(rows) +
                                     " column, got shape " + shape_to_string(tc.shape));
    }
    ids.push_back(c.id);
  }
  std::size_t k = cols.size();
  Tensor out = Tensor::zeros({rows, k});
  for (std::size_t j = 0; j < k; ++j) {
    const Tensor& tc = value(cols[j]);
    for (std::size_t i = 0; i < rows; ++i) out(i, j) = tc.values[i];
  }
  return push("concat_cols", std::move(out), std::move(ids), [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    std::size_t rows = n.value.shape[0], k = n.value.shape[1];
    for (std::size_t j = 0; j < k; ++j) {
      if (!t.nodes_[n.inputs[j]].requires_grad) continue;
      Tensor& g = t.grad_buf(n.inputs[j]);
      for (std::size_t i = 0; i < rows; ++i) g.values[i] += n.grad(i, j);
    }
  });
}

Var Tape::conv1d(Var x, Var w, Var b) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  const Tensor& tb = value(b);
  require_rank("conv1d", tx, 2);
  require_rank("conv1d", tw, 3);
  require_rank("conv1d", tb, 1);
  std::size_t t_len = tx.shape[0], cin = tx.shape[1];
  std::size_t k = tw.shape[0], cout = tw.shape[2];
  if (tw.shape[1] != cin) {
    shape_error("conv1d", "filter expects " + std::to_string(tw.shape[1]) + " input channels, x has " +
                              std::to_string(cin));
  }
  if (tb.shape[0] != cout) shape_error("conv1d", "bias length does not match output channels");
  std::size_t pad = (k - 1) / 2;
  Tensor out = Tensor::zeros({t_len, cout});
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t o = 0; o < cout; ++o) out(t, o) = tb(o);
    for (std::size_t q = 0; q < k; ++q) {
      std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + q) - static_cast<std::ptrdiff_t>(pad);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        double xv = tx(static_cast<std::size_t>(src), ci);
        if (xv == 0.0) continue;
        for (std::size_t o = 0; o < cout; ++o) out(t, o) += xv * tw(q, ci, o);
      }
    }
  }
  return push("conv1d", std::move(out), {x.id, w.id, b.id}, [pad](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    const Tensor& tx = t.nodes_[n.inputs[0]].value;
    const Tensor& tw = t.nodes_[n.inputs[1]].value;
    std::size_t t_len = tx.shape[0], cin = tx.shape[1];
    std::size_t k = tw.shape[0], cout = tw.shape[2];
    bool need_x = t.nodes_[n.inputs[0]].requires_grad;
    bool need_w = t.nodes_[n.inputs[1]].requires_grad;
    bool need_b = t.nodes_[n.inputs[2]].requires_grad;
    Tensor* gx = need_x ? &t.grad_buf(n.inputs[0]) : nullptr;
    Tensor* gw = need_w ? &t.grad_buf(n.inputs[1]) : nullptr;
    Tensor* gb = need_b ? &t.grad_buf(n.inputs[2]) : nullptr;
    for (std::size_t tt = 0; tt < t_len; ++tt) {
      if (gb) {
        for (std::size_t o = 0; o < cout; ++o) (*gb)(o) += n.grad(tt, o);
      }
      for (std::size_t q = 0; q < k; ++q) {
        std::ptrdiff_t src = static_cast<std::ptrdiff_t>(tt + q) - static_cast<std::ptrdiff_t>(pad);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
        std::size_t s = static_cast<std::size_t>(src);
        for (std::size_t ci = 0; ci < cin; ++ci) {
          double xv = tx(s, ci);
          for (std::size_t o = 0; o < cout; ++o) {
            double g = n.grad(tt, o);
            if (gx) (*gx)(s, ci) += g * tw(q, ci, o);
            if (gw) (*gw)(q, ci, o) += g * xv;
          }
        }
      }
    }
  });
}

Var Tape::conv2d(Var x, Var w, Var b) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  const Tensor& tb = value(b);
  require_rank("conv2d", tx, 4);
  require_rank("conv2d", tw, 4);
  require_rank("conv2d", tb, 1);
  std::size_t frames = tx.shape[0], h = tx.shape[1], wd = tx.shape[2], cin = tx.shape[3];
  std::size_t kh = tw.shape[0], kw = tw.shape[1], cout = tw.shape[3];
  if (tw.shape[2] != cin) {
    shape_error("conv2d", "filter expects " + std::to_string(tw.shape[2]) +
                              " input channels, x has " + std::to_string(cin));
  }
  if (tb.shape[0] != cout) shape_error("conv2d", "bias length does not match output channels");
  std::size_t ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  Tensor out = Tensor::zeros({frames, h, wd, cout});
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < wd; ++j) {
        for (std::size_t o = 0; o < cout; ++o) out(f, i, j, o) = tb(o);
        for (std::size_t qi = 0; qi < kh; ++qi) {
          std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + qi) - static_cast<std::ptrdiff_t>(ph);
          if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t qj = 0; qj < kw; ++qj) {
            std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + qj) - static_cast<std::ptrdiff_t>(pw);
            if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(wd)) continue;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              double xv = tx(f, static_cast<std::size_t>(si), static_cast<std::size_t>(sj), ci);
              for (std::size_t o = 0; o < cout; ++o) out(f, i, j, o) += xv * tw(qi, qj, ci, o);
            }
          }
        }
      }
    }
  }
  return push("conv2d", std::move(out), {x.id, w.id, b.id}, [ph, pw](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    const Tensor& tx = t.nodes_[n.inputs[0]].value;
    const Tensor& tw = t.nodes_[n.inputs[1]].value;
    std::size_t frames = tx.shape[0], h = tx.shape[1], wd = tx.shape[2], cin = tx.shape[3];
    std::size_t kh = tw.shape[0], kw = tw.shape[1], cout = tw.shape[3];
    bool need_x = t.nodes_[n.inputs[0]].requires_grad;
    bool need_w = t.nodes_[n.inputs[1]].requires_grad;
    bool need_b = t.nodes_[n.inputs[2]].requires_grad;
    Tensor* gx = need_x ? &t.grad_buf(n.inputs[0]) : nullptr;
    Tensor* gw = need_w ? &t.grad_buf(n.inputs[1]) : nullptr;
    Tensor* gb = need_b ? &t.grad_buf(n.inputs[2]) : nullptr;
    for (std::size_t f = 0; f < frames; ++f) {
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < wd; ++j) {
          if (gb) {
            for (std::size_t o = 0; o < cout; ++o) (*gb)(o) += n.grad(f, i, j, o);
          }
          for (std::size_t qi = 0; qi < kh; ++qi) {
            std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + qi) - static_cast<std::ptrdiff_t>(ph);
            if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t qj = 0; qj < kw; ++qj) {
              std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + qj) - static_cast<std::ptrdiff_t>(pw);
              if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(wd)) continue;
              std::size_t usi = static_cast<std::size_t>(si), usj = static_cast<std::size_t>(sj);
              for (std::size_t ci = 0; ci < cin; ++ci) {
                double xv = tx(f, usi, usj, ci);
                for (std::size_t o = 0; o < cout; ++o) {
                  double g = n.grad(f, i, j, o);
                  if (gx) (*gx)(f, usi, usj, ci) += g * tw(qi, qj, ci, o);
                  if (gw) (*gw)(qi, qj, ci, o) += g * xv;
                }
              }
            }
          }
        }
      }
    }
  });
}

Var Tape::bidiag_solve(Var diag, Var super, Var rhs, bool transposed) {
  const Tensor& td = value(diag);
  const Tensor& ts = value(super);
  const Tensor& tr = value(rhs);
  require_rank("bidiag_solve", td, 1);
  require_rank("bidiag_solve", ts, 1);
  std::size_t t_len = td.shape[0];
  if (t_len == 0) shape_error("bidiag_solve", "empty diagonal");
  if (ts.shape[0] != t_len - 1) {
    shape_error("bidiag_solve", "superdiagonal length " + std::to_string(ts.shape[0]) +
                                    " does not match T = " + std::to_string(t_len));
  }
  if (tr.rank() < 1 || tr.rank() > 2 || tr.shape[0] != t_len) {
    shape_error("bidiag_solve", "rhs shape " + shape_to_string(tr.shape) +
                                    " does not match T = " + std::to_string(t_len));
  }
  std::size_t cols = tr.rank() == 2 ? tr.shape[1] : 1;
  Tensor out = Tensor::zeros(tr.shape);
  if (transposed) {
    solve_lower(td.values.data(), ts.values.data(), tr.values.data(), out.values.data(), t_len, cols);
  } else {
    solve_upper(td.values.data(), ts.values.data(), tr.values.data(), out.values.data(), t_len, cols);
  }
  return push("bidiag_solve", std::move(out), {diag.id, super.id, rhs.id},
              [transposed, t_len, cols](Tape& t, int self) {
                const Node& n = t.nodes_[self];
                const Tensor& td = t.nodes_[n.inputs[0]].value;
                const Tensor& ts = t.nodes_[n.inputs[1]].value;
                const Tensor& xv = n.value;
                // Gradient w.r.t. rhs is the opposite-transpose solve of the
                // incoming gradient; the band gradients are -(U X^T) or
                // -(X U^T) restricted to the band.
                Tensor u = Tensor::zeros(n.grad.shape);
                if (transposed) {
                  solve_upper(td.values.data(), ts.values.data(), n.grad.values.data(),
                              u.values.data(), t_len, cols);
                } else {
                  solve_lower(td.values.data(), ts.values.data(), n.grad.values.data(),
                              u.values.data(), t_len, cols);
                }
                t.accumulate(n.inputs[2], u);
                bool need_d = t.nodes_[n.inputs[0]].requires_grad;
                bool need_s = t.nodes_[n.inputs[1]].requires_grad;
                if (!need_d && !need_s) return;
                Tensor* gd = need_d ? &t.grad_buf(n.inputs[0]) : nullptr;
                Tensor* gs = need_s ? &t.grad_buf(n.inputs[1]) : nullptr;
                for (std::size_t tt = 0; tt < t_len; ++tt) {
                  double acc_d = 0.0;
                  for (std::size_t c = 0; c < cols; ++c) {
                    acc_d += u.values[tt * cols + c] * xv.values[tt * cols + c];
                  }
                  if (gd) (*gd)(tt) -= acc_d;
                  if (gs && tt + 1 < t_len) {
                    double acc_s = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) {
                      // For B x = r the band gradient pairs u_t with x_{t+1};
                      // for B^T x = r it pairs x_t with u_{t+1}.
                      if (transposed) {
                        acc_s += xv.values[tt * cols + c] * u.values[(tt + 1) * cols + c];
                      } else {
                        acc_s += u.values[tt * cols + c] * xv.values[(tt + 1) * cols + c];
                      }
                    }
                    (*gs)(tt) -= acc_s;
                  }
                }
              });
}

void Tape::backward(Var output) {
  const Node& out = node_at(output.id);
  if (out.value.numel() != 1) {
    throw std::invalid_argument(
        "Tape::backward: output is not scalar (shape " + shape_to_string(out.value.shape) +
        "); pass an explicit seed");
  }
  backward(output, Tensor::full(out.value.shape, 1.0));
}

void Tape::backward(Var output, const Tensor& seed) {
  if (nodes_.empty() || !output.valid()) {
    throw std::logic_error("Tape::backward: no recorded forward pass");
  }
  const Node& out = node_at(output.id);
  if (!out.value.same_shape(seed)) {
    throw std::invalid_argument("Tape::backward: seed shape " + shape_to_string(seed.shape) +
                                " does not match output shape " + shape_to_string(out.value.shape));
  }
  if (!out.requires_grad) return;
  Tensor& g = grad_buf(output.id);
  for (std::size_t i = 0; i < seed.values.size(); ++i) g.values[i] += seed.values[i];
  for (int i = output.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.values.empty() || !n.back) continue;
    n.back(*this, i);
  }
}

}  // namespace dgpvae
