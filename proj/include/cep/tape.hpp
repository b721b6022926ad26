#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "cep/tensor.hpp"

namespace cep {

// Op catalog. Every forward op records a node on the active tape; backward
// replays the tape in reverse with hand-derived adjoints.
enum class OpKind : int32_t {
  kLeaf = 0,
  kAdd,
  kSub,
  kMul,        // elementwise
  kScale,      // x * attrs.scalar
  kAddConst,   // x + attrs.scalar
  kMatmul,     // (n,k) x (k,m)
  kConv2d,     // NHWC direct convolution, operands (x, w, b)
  kRelu,
  kExp,        // input clamped at 700 so finite inputs stay finite
  kLog,        // log(max(x, kEps))
  kSqrt,       // sqrt(max(x + kEps, 0)); shared-epsilon rule
  kConcatLast,
  kStackRows,  // k vectors (d) -> (k, d)
  kRowSlice,   // (n, d) -> (d)
  kTimeSlice,  // (M, T, rest...) -> (M, (t1-t0)*rest) flattened
  kReshape,
  kAddRowVec,  // (..., d) + (d)
  kReduceMean,
  kReduceVar,  // biased (divide by group size)
  kReduceSum,
  kDot,        // flattened dot product -> scalar
  kSqDist,     // squared L2 distance -> scalar
  kRowL2Dist,  // (n,d),(n,d) -> (n); exact sqrt, zero subgradient at 0
  kTgnNorm,    // temporal-group normalization, operands (x, scale, shift)
  kStopGrad,
};

const char* op_name(OpKind k);

struct OpAttrs {
  int64_t stride = 1;
  int64_t pad = 0;
  double scalar = 0.0;
  std::vector<int64_t> axes;
  Shape new_shape;
  int64_t row = 0;
  int64_t t0 = 0, t1 = 0;           // time_slice range
  std::vector<int32_t> chunk_of_t;  // tgn: temporal index -> chunk id
};

class Tape;

// Handle to a tape node. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int32_t id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Gradients of one backward pass, addressed by tape node id. Every leaf
// created with requires_grad is present (zero-filled if unreached).
class GradientMap {
 public:
  const Tensor& at(Var v) const;
  bool contains(Var v) const;

 private:
  friend class Tape;
  std::vector<int32_t> ids_;
  std::vector<Tensor> grads_;
};

class Tape {
 public:
  explicit Tape(Precision prec) : prec_(prec) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Precision precision() const { return prec_; }
  size_t size() const { return nodes_.size(); }

  Var leaf(Tensor value, bool requires_grad = false);

  // Dynamic entry point; typed wrappers below all route through here.
  Var apply(OpKind kind, std::span<const Var> operands,
            const OpAttrs& attrs = {});

  // Stable reference: node storage never relocates on later applies.
  const Tensor& value(Var v) const;
  bool needs_grad(Var v) const;

  // Reverse-mode gradients of a scalar loss with respect to every
  // requires_grad leaf. Leaves behind stop_gradient receive exact zeros.
  GradientMap backward(Var loss);

 private:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    OpAttrs attrs;
    std::vector<int32_t> operands;
    Tensor value;
    std::vector<Tensor> saved;  // forward values needed by the adjoint
    bool needs_grad = false;
  };

  Var push(Node n);
  const Node& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }

  void forward_node(Node& n);
  void backward_node(int32_t id, const Tensor& grad_out,
                     std::vector<Tensor>& grads,
                     std::vector<uint8_t>& has_grad);

  Precision prec_;
  std::deque<Node> nodes_;
};

// Typed op wrappers.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_const(Var a, double c);
Var matmul(Var a, Var b);
Var conv2d(Var x, Var w, Var b, int64_t stride, int64_t pad);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var concat_last(std::span<const Var> parts);
Var stack_rows(std::span<const Var> rows);
Var row_slice(Var m, int64_t row);
Var time_slice(Var a, int64_t t0, int64_t t1);
Var reshape(Var a, Shape s);
Var add_rowvec(Var m, Var v);
Var reduce_mean(Var a, std::vector<int64_t> axes);
Var reduce_var(Var a, std::vector<int64_t> axes);
Var reduce_sum(Var a, std::vector<int64_t> axes);
Var dot(Var a, Var b);
Var sqdist(Var a, Var b);
Var l2dist_rows(Var a, Var b);
Var tgn_norm(Var x, Var scale, Var shift, std::vector<int32_t> chunk_of_t);
Var stop_gradient(Var a);

// log(sum(exp(s))) with max-subtraction; composite of catalog ops.
Var logsumexp(Var s);

}  // namespace cep
