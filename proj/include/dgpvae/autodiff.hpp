#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "dgpvae/params.hpp"
#include "dgpvae/tensor.hpp"

namespace dgpvae {

// Handle into a Tape node.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Each primitive records its inputs and a backward closure;
// backward() sweeps the tape once in reverse creation order, which is a
// topological order by construction. Values are immutable once recorded.
class Tape {
 public:
  Var constant(Tensor value);
  Var leaf(Tensor value, bool requires_grad = true);
  // Leaf tied to an external parameter; backward() accumulates into its grad.
  Var param(Parameter& p);

  const Tensor& value(Var v) const;
  // Gradient accumulated so far (zeros if the node was never reached).
  Tensor grad(Var v) const;

  // Elementwise, same shape.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  // Scalar constants folded into the op, no extra node inputs.
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  // (n x m) matrix plus length-m row vector broadcast over rows.
  Var add_bias(Var mat, Var bias);

  Var matmul(Var a, Var b);
  Var relu(Var a);
  Var softplus(Var a);
  Var log(Var a);

  Var sum(Var a);
  Var mean(Var a);

  Var reshape(Var a, std::vector<std::size_t> shape);
  Var transpose(Var a);
  // Slices along the first / second axis of a matrix (row range [r0, r1)).
  Var slice_rows(Var a, std::size_t r0, std::size_t r1);
  Var slice_cols(Var a, std::size_t c0, std::size_t c1);
  Var gather_rows(Var a, std::vector<std::size_t> indices);
  // Concatenate length-n column vectors (n x 1 or n) into an n x k matrix.
  Var concat_cols(const std::vector<Var>& cols);

  // x: (T x Cin), w: (K x Cin x Cout), b: (Cout). Same-padding over the time
  // axis; for even K the padding is one shorter on the left.
  Var conv1d(Var x, Var w, Var b);
  // x: (N x H x W x Cin), w: (Kh x Kw x Cin x Cout), b: (Cout). Same-padding,
  // applied independently per leading frame.
  Var conv2d(Var x, Var w, Var b);

  // Solves B x = rhs (transposed = false) or B^T x = rhs (transposed = true)
  // where B is upper bidiagonal with the given diagonal and superdiagonal.
  // rhs may be a vector (T) or matrix (T x M); solves run per column.
  // For T = 1 pass a superdiagonal of shape (0).
  Var bidiag_solve(Var diag, Var super, Var rhs, bool transposed);

  // Seeds the output gradient with ones (scalar outputs) or the given seed and
  // propagates to every reachable node. Parameter leaves accumulate into their
  // Parameter::grad.
  void backward(Var output);
  void backward(Var output, const Tensor& seed);

  std::size_t size() const { return nodes_.size(); }

 private:
  friend struct TapeOps;
  struct Node {
    const char* op;
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    std::vector<int> inputs;
    std::function<void(Tape&, int)> back;
    bool requires_grad = false;
    Parameter* parameter = nullptr;
  };

  Var push(const char* op, Tensor value, std::vector<int> inputs,
           std::function<void(Tape&, int)> back);
  Node& node(int id) { return nodes_[id]; }
  const Node& node_at(int id) const;
  Tensor& grad_buf(int id);
  void accumulate(int id, const Tensor& g);
  void accumulate_scaled(int id, const Tensor& g, double c);
  bool any_requires_grad(const std::vector<int>& ids) const;

  // Deque keeps node references stable while new nodes are recorded.
  std::deque<Node> nodes_;
};

}  // namespace dgpvae
