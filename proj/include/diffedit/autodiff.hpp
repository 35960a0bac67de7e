#pragma once

#include <cstddef>
#include <functional>
#include <string_view>
#include <vector>

#include "diffedit/tensor.hpp"

namespace diffedit {

class Tape;

namespace detail {
struct Recorder;
}

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive and not yet consumed by backward().
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

enum class OpKind {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kMatmul,
  kTanh,
  kSum,
  kMean,
  kL1Norm,
  kL2Norm,
  kDot,
  kConcat,
  kBroadcast,
};

std::string_view op_name(OpKind op);

// Gradients of one backward pass, keyed by leaf. Leaves the output does not
// depend on have zero gradients of their own shape.
class Gradients {
 public:
  const Tensor& operator[](Var leaf) const;
  std::size_t leaf_count() const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<Tensor> grads_;
  std::vector<bool> is_leaf_;
};

// Reverse-mode record. Single use: backward() (or clear()) consumes it and
// any later recording or backward call throws StaleTapeError. Confined to one
// thread; not copyable or movable because Vars point back at it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable input; gradients are reported for it.
  Var leaf(Tensor value);
  // Differentiable input that aliases caller storage. `value` must outlive
  // the tape and stay unmodified while it is live.
  Var leaf_ref(const Tensor& value);
  // Non-differentiable input.
  Var constant(Tensor value);
  Var constant_ref(const Tensor& value);

  // Gradients of a one-element output (seed 1).
  Gradients backward(Var output);
  // Vector-Jacobian product with an explicit seed of the output's shape.
  Gradients backward(Var output, const Tensor& seed);

  void clear();
  bool stale() const { return stale_; }

  // Number of recorded primitive ops (leaves excluded).
  std::size_t node_count() const { return op_count_; }
  // Elements of intermediate tensors saved for the backward pass. Leaves
  // (parameters, inputs) are not counted; each saved tensor counts once.
  std::size_t retained_count() const { return retained_; }

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const;

 private:
  friend struct detail::Recorder;

  struct Node {
    OpKind op = OpKind::kLeaf;
    std::size_t in0 = 0;
    std::size_t in1 = 0;
    std::size_t arity = 0;
    double arg = 0.0;
    Tensor owned;
    const Tensor* ref = nullptr;
    bool requires_grad = false;
    bool retained = false;

    const Tensor& value() const { return ref != nullptr ? *ref : owned; }
  };

  Var push(Node node);
  void check_live() const;
  void retain(std::size_t id);
  void backprop(std::size_t id, const Tensor& g, std::vector<Tensor>& grads,
                std::vector<char>& has) const;

  std::vector<Node> nodes_;
  std::size_t op_count_ = 0;
  std::size_t retained_ = 0;
  bool stale_ = false;
};

// Primitives. Broadcasting is limited to: equal shapes, or one operand with a
// single element (scalar <-> tensor). Row broadcasting is explicit through
// broadcast(). Each throws ShapeError naming the primitive and both shapes,
// and NumericError if the result is not finite.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double s);
// [m,k] x [k,n] -> [m,n]
Var matmul(Var a, Var b);
Var tanh(Var a);
Var sum(Var a);
Var mean(Var a);
// sum |a_i|; subgradient sign(0) = 0
Var l1_norm(Var a);
// sqrt(sum a_i^2); subgradient 0 at the origin
Var l2_norm(Var a);
// Inner product of two equally shaped tensors; returns a scalar.
Var dot(Var a, Var b);
// Concatenate along the last axis; leading dimensions must match.
Var concat(Var a, Var b);
// Repeat a one-element tensor, or a single row ({n} or {1,n}), to `shape`.
Var broadcast(Var a, Shape shape);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

// Scalar-valued function of one tensor, recorded on the supplied tape.
using RecordedFn = std::function<Var(Tape&, Var)>;

// max_i |analytic_i - central_i| / max(|analytic_i|, |central_i|, 1e-12),
// central differences with the given step.
double grad_check(const RecordedFn& fn, const Tensor& point, double step);

}  // namespace diffedit
