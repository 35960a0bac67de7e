#include "diffedit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "diffedit/error.hpp"
#include "diffedit/simd/kernels.hpp"

namespace diffedit {

std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kScale: return "scale";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kL1Norm: return "l1_norm";
    case OpKind::kL2Norm: return "l2_norm";
    case OpKind::kDot: return "dot";
    case OpKind::kConcat: return "concat";
    case OpKind::kBroadcast: return "broadcast";
  }
  return "?";
}

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw StaleTapeError("value() on an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const {
  return tape_ != nullptr && tape_->requires_grad(id_);
}

const Tensor& Gradients::operator[](Var leaf) const {
  if (leaf.tape() != tape_ || leaf.id() >= grads_.size() ||
      !is_leaf_[leaf.id()]) {
    throw ConfigError("gradient requested for a Var that is not a leaf of this tape");
  }
  return grads_[leaf.id()];
}

std::size_t Gradients::leaf_count() const {
  return static_cast<std::size_t>(
      std::count(is_leaf_.begin(), is_leaf_.end(), true));
}

void Tape::check_live() const {
  if (stale_) throw StaleTapeError("tape already consumed by backward() or clear()");
}

const Tensor& Tape::value(std::size_t id) const {
  check_live();
  return nodes_.at(id).value();
}

bool Tape::requires_grad(std::size_t id) const {
  check_live();
  return nodes_.at(id).requires_grad;
}

Var Tape::push(Node node) {
  check_live();
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::leaf_ref(const Tensor& value) {
  Node n;
  n.ref = &value;
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::constant_ref(const Tensor& value) {
  Node n;
  n.ref = &value;
  return push(std::move(n));
}

void Tape::retain(std::size_t id) {
  Node& n = nodes_[id];
  if (n.op == OpKind::kLeaf || n.retained) return;
  n.retained = true;
  retained_ += n.value().size();
}

void Tape::clear() {
  nodes_.clear();
  nodes_.shrink_to_fit();
  op_count_ = 0;
  retained_ = 0;
  stale_ = true;
}

namespace detail {

struct Recorder {
  // Saved-for-backward policy per primitive, applied only when the result
  // participates in differentiation.
  static void account(Tape& tape, OpKind op, std::size_t in0, std::size_t in1,
                      std::size_t out) {
    switch (op) {
      case OpKind::kMul:
      case OpKind::kDiv:
      case OpKind::kMatmul:
      case OpKind::kDot:
        tape.retain(in0);
        tape.retain(in1);
        break;
      case OpKind::kTanh:
        tape.retain(out);
        break;
      case OpKind::kL1Norm:
        tape.retain(in0);
        break;
      case OpKind::kL2Norm:
        tape.retain(in0);
        tape.retain(out);
        break;
      default:
        break;
    }
  }

  static Var record(OpKind op, Var a, Var b, std::size_t arity, Tensor out,
                    double arg = 0.0) {
    Tape* tape = a.tape();
    if (!out.all_finite()) {
      throw NumericError("numeric overflow in " + std::string(op_name(op)) +
                         " (non-finite result)");
    }
    Tape::Node n;
    n.op = op;
    n.in0 = a.id();
    n.in1 = arity > 1 ? b.id() : 0;
    n.arity = arity;
    n.arg = arg;
    n.owned = std::move(out);
    n.requires_grad = a.requires_grad() || (arity > 1 && b.requires_grad());
    Var v = tape->push(std::move(n));
    ++tape->op_count_;
    if (tape->nodes_[v.id()].requires_grad) {
      account(*tape, op, a.id(), arity > 1 ? b.id() : a.id(), v.id());
    }
    return v;
  }

  static Tape::Node& node(Tape& tape, std::size_t id) { return tape.nodes_[id]; }
};

}  // namespace detail

namespace {

using detail::Recorder;

[[noreturn]] void shape_error(std::string_view op, const Shape& a,
                              const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) +
                   " and " + shape_string(b));
}

void same_tape(std::string_view op, Var a, Var b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw ConfigError(std::string(op) + ": operands recorded on different tapes");
  }
}

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

Broadcast classify(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (a.size() == 1 && b.size() >= 1 && b.rank() >= a.rank()) {
    return Broadcast::kLeftScalar;
  }
  if (b.size() == 1 && a.rank() >= b.rank()) return Broadcast::kRightScalar;
  shape_error(op, a.shape(), b.shape());
}

template <typename Kernel, typename Fn>
Tensor elementwise(std::string_view op, const Tensor& a, const Tensor& b,
                   Kernel kernel, Fn fn) {
  switch (classify(op, a, b)) {
    case Broadcast::kNone: {
      Tensor out(a.shape());
      kernel(a.data().data(), b.data().data(), out.data().data(), a.size());
      return out;
    }
    case Broadcast::kLeftScalar: {
      Tensor out(b.shape());
      const double s = a[0];
      for (std::size_t i = 0; i < b.size(); ++i) out[i] = fn(s, b[i]);
      return out;
    }
    case Broadcast::kRightScalar: {
      Tensor out(a.shape());
      const double s = b[0];
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i], s);
      return out;
    }
  }
  return Tensor();
}

// Adds `g` (shaped like the op output) into the gradient slot of an operand
// whose value is `operand`; reduces when the operand was scalar-broadcast.
void accumulate(Tensor& slot, char& has, const Tensor& operand, Tensor g) {
  if (operand.size() == 1 && g.size() != 1) {
    g = Tensor(operand.shape(), simd::kernels().sum(g.data().data(), g.size()));
  } else if (g.shape() != operand.shape()) {
    g = g.reshaped(operand.shape());
  }
  if (!has) {
    slot = std::move(g);
    has = 1;
  } else {
    simd::kernels().add(slot.data().data(), g.data().data(), slot.data().data(),
                        slot.size());
  }
}

Tensor times(const Tensor& g, const Tensor& other) {
  if (other.size() == 1) {
    Tensor out(g.shape());
    simd::kernels().scale(other[0], g.data().data(), out.data().data(), g.size());
    return out;
  }
  if (g.size() == 1) {
    Tensor out(other.shape());
    simd::kernels().scale(g[0], other.data().data(), out.data().data(),
                          other.size());
    return out;
  }
  Tensor out(g.shape());
  simd::kernels().mul(g.data().data(), other.data().data(), out.data().data(),
                      g.size());
  return out;
}

}  // namespace

Var add(Var a, Var b) {
  same_tape("add", a, b);
  return Recorder::record(
      OpKind::kAdd, a, b, 2,
      elementwise("add", a.value(), b.value(), simd::kernels().add,
                  [](double x, double y) { return x + y; }));
}

Var sub(Var a, Var b) {
  same_tape("sub", a, b);
  return Recorder::record(
      OpKind::kSub, a, b, 2,
      elementwise("sub", a.value(), b.value(), simd::kernels().sub,
                  [](double x, double y) { return x - y; }));
}

Var mul(Var a, Var b) {
  same_tape("mul", a, b);
  return Recorder::record(
      OpKind::kMul, a, b, 2,
      elementwise("mul", a.value(), b.value(), simd::kernels().mul,
                  [](double x, double y) { return x * y; }));
}

Var div(Var a, Var b) {
  same_tape("div", a, b);
  return Recorder::record(
      OpKind::kDiv, a, b, 2,
      elementwise("div", a.value(), b.value(), simd::kernels().div,
                  [](double x, double y) { return x / y; }));
}

Var scale(Var a, double s) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  simd::kernels().scale(s, x.data().data(), out.data().data(), x.size());
  return Recorder::record(OpKind::kScale, a, a, 1, std::move(out), s);
}

Var matmul(Var a, Var b) {
  same_tape("matmul", a, b);
  const Tensor& x = a.value();
  const Tensor& w = b.value();
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0)) {
    shape_error("matmul", x.shape(), w.shape());
  }
  Tensor out({x.dim(0), w.dim(1)});
  simd::kernels().gemm_acc(x.data().data(), w.data().data(), out.data().data(),
                           x.dim(0), x.dim(1), w.dim(1));
  return Recorder::record(OpKind::kMatmul, a, b, 2, std::move(out));
}

Var tanh(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
  return Recorder::record(OpKind::kTanh, a, a, 1, std::move(out));
}

Var sum(Var a) {
  const Tensor& x = a.value();
  return Recorder::record(
      OpKind::kSum, a, a, 1,
      Tensor::scalar(simd::kernels().sum(x.data().data(), x.size())));
}

Var mean(Var a) {
  const Tensor& x = a.value();
  const double total = simd::kernels().sum(x.data().data(), x.size());
  return Recorder::record(OpKind::kMean, a, a, 1,
                          Tensor::scalar(total / static_cast<double>(x.size())));
}

Var l1_norm(Var a) {
  const Tensor& x = a.value();
  return Recorder::record(
      OpKind::kL1Norm, a, a, 1,
      Tensor::scalar(simd::kernels().abs_sum(x.data().data(), x.size())));
}

Var l2_norm(Var a) {
  const Tensor& x = a.value();
  const double sq = simd::kernels().dot(x.data().data(), x.data().data(), x.size());
  return Recorder::record(OpKind::kL2Norm, a, a, 1, Tensor::scalar(std::sqrt(sq)));
}

Var dot(Var a, Var b) {
  same_tape("dot", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape() != y.shape()) shape_error("dot", x.shape(), y.shape());
  return Recorder::record(
      OpKind::kDot, a, b, 2,
      Tensor::scalar(simd::kernels().dot(x.data().data(), y.data().data(), x.size())));
}

Var concat(Var a, Var b) {
  same_tape("concat", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() == 0 || x.rank() != y.rank() ||
      !std::equal(x.shape().begin(), x.shape().end() - 1, y.shape().begin())) {
    shape_error("concat", x.shape(), y.shape());
  }
  const std::size_t p = x.shape().back();
  const std::size_t q = y.shape().back();
  const std::size_t rows = x.size() / p;
  Shape shape = x.shape();
  shape.back() = p + q;
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.data().data() + r * p, p, out.data().data() + r * (p + q));
    std::copy_n(y.data().data() + r * q, q, out.data().data() + r * (p + q) + p);
  }
  return Recorder::record(OpKind::kConcat, a, b, 2, std::move(out));
}

Var broadcast(Var a, Shape shape) {
  const Tensor& x = a.value();
  Tensor out(shape);
  if (x.size() == 1) {
    std::fill(out.data().begin(), out.data().end(), x[0]);
  } else {
    const bool row_like = (x.rank() == 1) || (x.rank() == 2 && x.dim(0) == 1);
    if (!row_like || shape.empty() || shape.back() != x.size()) {
      shape_error("broadcast", x.shape(), shape);
    }
    const std::size_t n = x.size();
    for (std::size_t r = 0; r < out.size() / n; ++r) {
      std::copy_n(x.data().data(), n, out.data().data() + r * n);
    }
  }
  return Recorder::record(OpKind::kBroadcast, a, a, 1, std::move(out));
}

void Tape::backprop(std::size_t id, const Tensor& g, std::vector<Tensor>& grads,
                    std::vector<char>& has) const {
  const Node& n = nodes_[id];
  const auto& k = simd::kernels();
  const Tensor& a = nodes_[n.in0].value();
  const Tensor& b = nodes_[n.in1].value();
  const bool ga = nodes_[n.in0].requires_grad;
  const bool gb = n.arity > 1 && nodes_[n.in1].requires_grad;
  auto acc_a = [&](Tensor t) { accumulate(grads[n.in0], has[n.in0], a, std::move(t)); };
  auto acc_b = [&](Tensor t) { accumulate(grads[n.in1], has[n.in1], b, std::move(t)); };

  switch (n.op) {
    case OpKind::kLeaf:
      break;
    case OpKind::kAdd:
      if (ga) acc_a(g);
      if (gb) acc_b(g);
      break;
    case OpKind::kSub:
      if (ga) acc_a(g);
      if (gb) {
        Tensor neg(g.shape());
        k.scale(-1.0, g.data().data(), neg.data().data(), g.size());
        acc_b(std::move(neg));
      }
      break;
    case OpKind::kMul:
      if (ga) acc_a(times(g, b));
      if (gb) acc_b(times(g, a));
      break;
    case OpKind::kDiv: {
      // y = a / b: da = g / b, db = -g * y / b
      const Tensor& y = n.value();
      if (ga) {
        if (b.size() == 1) {
          Tensor t(g.shape());
          k.scale(1.0 / b[0], g.data().data(), t.data().data(), g.size());
          acc_a(std::move(t));
        } else if (g.size() == 1) {
          Tensor t(b.shape());
          for (std::size_t i = 0; i < b.size(); ++i) t[i] = g[0] / b[i];
          acc_a(std::move(t));
        } else {
          Tensor t(g.shape());
          k.div(g.data().data(), b.data().data(), t.data().data(), g.size());
          acc_a(std::move(t));
        }
      }
      if (gb) {
        Tensor t(y.shape());
        for (std::size_t i = 0; i < y.size(); ++i) {
          const double bi = b.size() == 1 ? b[0] : b[i];
          const double gi = g.size() == 1 ? g[0] : g[i];
          t[i] = -gi * y[i] / bi;
        }
        acc_b(std::move(t));
      }
      break;
    }
    case OpKind::kScale:
      if (ga) {
        Tensor t(g.shape());
        k.scale(n.arg, g.data().data(), t.data().data(), g.size());
        acc_a(std::move(t));
      }
      break;
    case OpKind::kMatmul: {
      const std::size_t m = a.dim(0);
      const std::size_t inner = a.dim(1);
      const std::size_t cols = b.dim(1);
      if (ga) {
        // dA[i,k] = sum_j g[i,j] * B[k,j]
        Tensor t(a.shape());
        for (std::size_t i = 0; i < m; ++i) {
          const double* gi = g.data().data() + i * cols;
          for (std::size_t kk = 0; kk < inner; ++kk) {
            t[i * inner + kk] = k.dot(gi, b.data().data() + kk * cols, cols);
          }
        }
        acc_a(std::move(t));
      }
      if (gb) {
        // dB[k,:] = sum_i A[i,k] * g[i,:], ascending i
        Tensor t(b.shape());
        for (std::size_t kk = 0; kk < inner; ++kk) {
          double* row = t.data().data() + kk * cols;
          for (std::size_t i = 0; i < m; ++i) {
            k.axpy(a[i * inner + kk], g.data().data() + i * cols, row, cols);
          }
        }
        acc_b(std::move(t));
      }
      break;
    }
    case OpKind::kTanh:
      if (ga) {
        const Tensor& y = n.value();
        Tensor t(y.shape());
        for (std::size_t i = 0; i < y.size(); ++i) t[i] = g[i] * (1.0 - y[i] * y[i]);
        acc_a(std::move(t));
      }
      break;
    case OpKind::kSum:
      if (ga) acc_a(Tensor(a.shape(), g[0]));
      break;
    case OpKind::kMean:
      if (ga) acc_a(Tensor(a.shape(), g[0] / static_cast<double>(a.size())));
      break;
    case OpKind::kL1Norm:
      if (ga) {
        Tensor t(a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) {
          const double s = a[i] > 0.0 ? 1.0 : (a[i] < 0.0 ? -1.0 : 0.0);
          t[i] = g[0] * s;
        }
        acc_a(std::move(t));
      }
      break;
    case OpKind::kL2Norm:
      if (ga) {
        const double norm = n.value()[0];
        Tensor t(a.shape());
        if (norm > 0.0) k.scale(g[0] / norm, a.data().data(), t.data().data(), a.size());
        acc_a(std::move(t));
      }
      break;
    case OpKind::kDot:
      if (ga) {
        Tensor t(a.shape());
        k.scale(g[0], b.data().data(), t.data().data(), b.size());
        acc_a(std::move(t));
      }
      if (gb) {
        Tensor t(b.shape());
        k.scale(g[0], a.data().data(), t.data().data(), a.size());
        acc_b(std::move(t));
      }
      break;
    case OpKind::kConcat: {
      const std::size_t p = a.shape().back();
      const std::size_t q = b.shape().back();
      const std::size_t rows = a.size() / p;
      if (ga) {
        Tensor t(a.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          std::copy_n(g.data().data() + r * (p + q), p, t.data().data() + r * p);
        }
        acc_a(std::move(t));
      }
      if (gb) {
        Tensor t(b.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          std::copy_n(g.data().data() + r * (p + q) + p, q, t.data().data() + r * q);
        }
        acc_b(std::move(t));
      }
      break;
    }
    case OpKind::kBroadcast:
      if (ga) {
        if (a.size() == 1) {
          acc_a(Tensor(a.shape(), k.sum(g.data().data(), g.size())));
        } else {
          const std::size_t width = a.size();
          Tensor t(a.shape());
          for (std::size_t r = 0; r < g.size() / width; ++r) {
            k.add(t.data().data(), g.data().data() + r * width, t.data().data(), width);
          }
          acc_a(std::move(t));
        }
      }
      break;
  }
}

Gradients Tape::backward(Var output) {
  check_live();
  if (output.tape() != this) throw ConfigError("backward: output from a different tape");
  const Tensor& v = nodes_.at(output.id()).value();
  if (v.size() != 1) {
    throw ShapeError("backward: output of shape " + shape_string(v.shape()) +
                     " needs an explicit seed");
  }
  return backward(output, Tensor(v.shape(), 1.0));
}

Gradients Tape::backward(Var output, const Tensor& seed) {
  check_live();
  if (output.tape() != this) throw ConfigError("backward: output from a different tape");
  const std::size_t out_id = output.id();
  if (seed.shape() != nodes_.at(out_id).value().shape()) {
    shape_error("backward seed", seed.shape(), nodes_[out_id].value().shape());
  }
  std::vector<Tensor> grads(out_id + 1);
  std::vector<char> has(out_id + 1, 0);
  grads[out_id] = seed;
  has[out_id] = 1;
  for (std::size_t id = out_id + 1; id-- > 0;) {
    if (!has[id] || !nodes_[id].requires_grad) continue;
    backprop(id, grads[id], grads, has);
    if (nodes_[id].op != OpKind::kLeaf) {
      grads[id] = Tensor();
    }
  }

  Gradients result;
  result.tape_ = this;
  result.grads_.resize(nodes_.size());
  result.is_leaf_.assign(nodes_.size(), false);
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (n.op != OpKind::kLeaf || !n.requires_grad) continue;
    result.is_leaf_[id] = true;
    if (id <= out_id && has[id]) {
      result.grads_[id] = std::move(grads[id]);
    } else {
      result.grads_[id] = Tensor(n.value().shape());
    }
  }
  clear();
  return result;
}

double grad_check(const RecordedFn& fn, const Tensor& point, double step) {
  if (!(step > 0.0)) throw ConfigError("grad_check: step must be positive");

  Tensor analytic;
  {
    Tape tape;
    Var x = tape.leaf(point);
    Var y = fn(tape, x);
    if (y.value().size() != 1) {
      throw ShapeError("grad_check: function must be scalar-valued, got " +
                       shape_string(y.value().shape()));
    }
    analytic = tape.backward(y)[x];
  }

  auto eval = [&](const Tensor& p) {
    Tape tape;
    Var x = tape.constant(p);
    const double v = fn(tape, x).value().item();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
    return v;
  };

  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + step;
    const double hi = eval(probe);
    probe[i] = point[i] - step;
    const double lo = eval(probe);
    probe[i] = point[i];
    const double central = (hi - lo) / (2.0 * step);
    const double denom =
        std::max({std::fabs(analytic[i]), std::fabs(central), 1e-12});
    worst = std::max(worst, std::fabs(analytic[i] - central) / denom);
  }
  return worst;
}

}  // namespace diffedit
