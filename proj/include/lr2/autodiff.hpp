#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace lr2 {

class Tape;

// Handle to a tape slot. Valid until the owning tape resets past it.
struct Var {
  Tape* tape = nullptr;
  uint32_t idx = 0;
  inline double value() const;
};

// Reverse-mode tape of scalar primitives. Nodes are appended in evaluation
// order, which is a topological order, so backward() is a single reverse
// sweep. Two fused dot ops keep networks compact: whole neuron
// pre-activations become one node each, with the inner loops running over
// contiguous value arrays instead of per-multiply nodes.
class Tape {
 public:
  static constexpr uint32_t kNone = 0xffffffffu;

  enum class Op : uint8_t {
    kLeaf,
    kConst,
    kAdd,      // a + b
    kAddImm,   // a + imm
    kSub,      // a - b
    kRsubImm,  // imm - a
    kMul,      // a * b
    kMulImm,   // a * imm
    kDiv,      // a / b
    kFma,      // a * b + c
    kFmaImm,   // a * imm + c
    kNeg,
    kTanh,
    kSigmoid,
    kExp,
    kLog,
    kSqr,
    kAffine,   // imm + sum_k w[k] * x[k], explicit argument ids
    kDotVV,    // imm + [c] + sum_k val[a+k] * val[b+k], contiguous ranges
    kDotVC,    // imm + [c] + sum_k val[a+k] * coef[b+k]
    kDotVX,    // imm + [c] + sum_k val[a+k] * external[b+k]
  };

  struct Node {
    uint32_t a = 0, b = 0, c = kNone, n = 0;
    double imm = 0.0;
    Op op = Op::kLeaf;
  };

  // rewind point: node count plus side-buffer sizes
  struct Mark {
    std::size_t nodes = 0, aff = 0, coef = 0;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  std::size_t size() const { return nodes_.size(); }

  void reset() {
    nodes_.clear();
    val_.clear();
    adj_.clear();
    aff_arg_.clear();
    aff_w_.clear();
    coef_.clear();
  }

  Mark mark() const { return {nodes_.size(), aff_arg_.size(), coef_.size()}; }

  // drops everything recorded after the mark; leaf values survive
  void rewind(const Mark& m) {
    nodes_.resize(m.nodes);
    val_.resize(m.nodes);
    aff_arg_.resize(m.aff);
    aff_w_.resize(m.aff);
    coef_.resize(m.coef);
    adj_.clear();
  }

  Var leaf(double v) { return push(Op::kLeaf, 0, 0, kNone, 0, 0.0, v); }
  Var constant(double v) { return push(Op::kConst, 0, 0, kNone, 0, 0.0, v); }

  void leaves(std::span<const double> values, std::vector<Var>& out) {
    out.clear();
    out.reserve(values.size());
    for (double v : values) out.push_back(leaf(v));
  }

  // overwrite a leaf's value in place (for rewound re-evaluations)
  void set_value(Var v, double x) { val_[v.idx] = x; }

  double value(uint32_t i) const { return val_[i]; }

  // imm + sum_k w[k]*x[k] over explicit argument ids
  Var affine(double bias, std::span<const Var> xs, std::span<const double> ws) {
    if (xs.size() != ws.size())
      throw std::invalid_argument("affine: argument/coefficient size mismatch");
    const uint32_t off = static_cast<uint32_t>(aff_arg_.size());
    double acc = bias;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      aff_arg_.push_back(xs[k].idx);
      aff_w_.push_back(ws[k]);
      acc += val_[xs[k].idx] * ws[k];
    }
    return push(Op::kAffine, off, 0, kNone, static_cast<uint32_t>(xs.size()), bias, acc);
  }

  // imm + [addend] + dot of two contiguous var ranges starting at a0, b0
  Var dot_range(Var a0, Var b0, uint32_t count, Var addend = {}, double bias = 0.0) {
    double acc = bias;
    const uint32_t c = addend.tape ? addend.idx : kNone;
    if (c != kNone) acc += val_[c];
    for (uint32_t k = 0; k < count; ++k) acc += val_[a0.idx + k] * val_[b0.idx + k];
    return push(Op::kDotVV, a0.idx, b0.idx, c, count, bias, acc);
  }

  // stash coefficients shared by several dot_coeffs_at nodes
  uint32_t stash_coeffs(std::span<const double> ws) {
    const uint32_t off = static_cast<uint32_t>(coef_.size());
    coef_.insert(coef_.end(), ws.begin(), ws.end());
    return off;
  }

  // imm + [addend] + dot of a contiguous var range with stashed coefficients
  Var dot_coeffs_at(Var a0, uint32_t coeff_off, uint32_t count, Var addend = {},
                    double bias = 0.0) {
    double acc = bias;
    const uint32_t c = addend.tape ? addend.idx : kNone;
    if (c != kNone) acc += val_[c];
    for (uint32_t k = 0; k < count; ++k) acc += val_[a0.idx + k] * coef_[coeff_off + k];
    return push(Op::kDotVC, a0.idx, coeff_off, c, count, bias, acc);
  }

  Var dot_coeffs(Var a0, std::span<const double> ws, Var addend = {}, double bias = 0.0) {
    return dot_coeffs_at(a0, stash_coeffs(ws), static_cast<uint32_t>(ws.size()), addend,
                         bias);
  }

  // coefficients owned by the caller; the block must outlive backward()
  void set_external(std::span<const double> block) { ext_ = block; }

  Var dot_external(Var a0, uint32_t ext_off, uint32_t count, Var addend = {},
                   double bias = 0.0) {
    double acc = bias;
    const uint32_t c = addend.tape ? addend.idx : kNone;
    if (c != kNone) acc += val_[c];
    for (uint32_t k = 0; k < count; ++k) acc += val_[a0.idx + k] * ext_[ext_off + k];
    return push(Op::kDotVX, a0.idx, ext_off, c, count, bias, acc);
  }

  // d(root)/d(node) for every node; call grad() afterwards
  void backward(Var root) {
    if (nodes_.empty()) throw std::runtime_error("backward: empty tape");
    if (root.tape != this || root.idx >= nodes_.size())
      throw std::invalid_argument("backward: root is not on this tape");
    adj_.assign(nodes_.size(), 0.0);
    adj_[root.idx] = 1.0;
    for (uint32_t i = static_cast<uint32_t>(nodes_.size()); i-- > 0;) {
      const double g = adj_[i];
      if (g == 0.0) continue;
      const Node& nd = nodes_[i];
      switch (nd.op) {
        case Op::kLeaf:
        case Op::kConst:
          break;
        case Op::kAdd:
          adj_[nd.a] += g;
          adj_[nd.b] += g;
          break;
        case Op::kAddImm:
          adj_[nd.a] += g;
          break;
        case Op::kSub:
          adj_[nd.a] += g;
          adj_[nd.b] -= g;
          break;
        case Op::kRsubImm:
          adj_[nd.a] -= g;
          break;
        case Op::kMul:
          adj_[nd.a] += g * val_[nd.b];
          adj_[nd.b] += g * val_[nd.a];
          break;
        case Op::kMulImm:
          adj_[nd.a] += g * nd.imm;
          break;
        case Op::kDiv: {
          const double ib = 1.0 / val_[nd.b];
          adj_[nd.a] += g * ib;
          adj_[nd.b] -= g * val_[i] * ib;
          break;
        }
        case Op::kFma:
          adj_[nd.a] += g * val_[nd.b];
          adj_[nd.b] += g * val_[nd.a];
          adj_[nd.c] += g;
          break;
        case Op::kFmaImm:
          adj_[nd.a] += g * nd.imm;
          adj_[nd.c] += g;
          break;
        case Op::kNeg:
          adj_[nd.a] -= g;
          break;
        case Op::kTanh: {
          const double y = val_[i];
          adj_[nd.a] += g * (1.0 - y * y);
          break;
        }
        case Op::kSigmoid: {
          const double y = val_[i];
          adj_[nd.a] += g * y * (1.0 - y);
          break;
        }
        case Op::kExp:
          adj_[nd.a] += g * val_[i];
          break;
        case Op::kLog:
          adj_[nd.a] += g / val_[nd.a];
          break;
        case Op::kSqr:
          adj_[nd.a] += g * 2.0 * val_[nd.a];
          break;
        case Op::kAffine:
          for (uint32_t k = 0; k < nd.n; ++k)
            adj_[aff_arg_[nd.a + k]] += g * aff_w_[nd.a + k];
          break;
        case Op::kDotVV: {
          if (nd.c != kNone) adj_[nd.c] += g;
          double* adj = adj_.data();
          const double* va = val_.data() + nd.a;
          const double* vb = val_.data() + nd.b;
          double* aa = adj + nd.a;
          double* ab = adj + nd.b;
          for (uint32_t k = 0; k < nd.n; ++k) {
            aa[k] += g * vb[k];
            ab[k] += g * va[k];
          }
          break;
        }
        case Op::kDotVC: {
          if (nd.c != kNone) adj_[nd.c] += g;
          const double* w = coef_.data() + nd.b;
          double* aa = adj_.data() + nd.a;
          for (uint32_t k = 0; k < nd.n; ++k) aa[k] += g * w[k];
          break;
        }
        case Op::kDotVX: {
          if (nd.c != kNone) adj_[nd.c] += g;
          const double* w = ext_.data() + nd.b;
          double* aa = adj_.data() + nd.a;
          for (uint32_t k = 0; k < nd.n; ++k) aa[k] += g * w[k];
          break;
        }
      }
    }
  }

  double grad(Var v) const {
    if (adj_.size() != nodes_.size()) throw std::runtime_error("grad: run backward first");
    return adj_[v.idx];
  }

  void grads(std::span<const Var> vars, std::span<double> out) const {
    if (adj_.size() != nodes_.size()) throw std::runtime_error("grads: run backward first");
    for (std::size_t i = 0; i < vars.size(); ++i) out[i] = adj_[vars[i].idx];
  }

  Var push(Op op, uint32_t a, uint32_t b, uint32_t c, uint32_t n, double imm,
           double val) {
    nodes_.push_back(Node{a, b, c, n, imm, op});
    val_.push_back(val);
    return Var{this, static_cast<uint32_t>(nodes_.size() - 1)};
  }

 private:
  std::vector<Node> nodes_;
  std::vector<double> val_;
  std::vector<double> adj_;
  std::vector<uint32_t> aff_arg_;
  std::vector<double> aff_w_;
  std::vector<double> coef_;
  std::span<const double> ext_;
};

inline double Var::value() const { return tape->value(idx); }

// contiguous ascending run of tape slots (parameter vectors)
struct VarRange {
  Tape* tape = nullptr;
  uint32_t first = 0;
  int count = 0;

  static VarRange of(std::span<const Var> vars) {
    VarRange r;
    if (vars.empty()) return r;
    r.tape = vars[0].tape;
    r.first = vars[0].idx;
    r.count = static_cast<int>(vars.size());
    for (std::size_t k = 1; k < vars.size(); ++k)
      if (vars[k].idx != vars[0].idx + k) return VarRange{};
    return r;
  }

  bool valid() const { return tape != nullptr; }
  Var operator[](int k) const { return Var{tape, first + static_cast<uint32_t>(k)}; }
};

inline Var operator+(Var a, Var b) {
  return a.tape->push(Tape::Op::kAdd, a.idx, b.idx, Tape::kNone, 0, 0.0,
                      a.value() + b.value());
}
inline Var operator+(Var a, double b) {
  return a.tape->push(Tape::Op::kAddImm, a.idx, 0, Tape::kNone, 0, b, a.value() + b);
}
inline Var operator+(double a, Var b) { return b + a; }

inline Var operator-(Var a, Var b) {
  return a.tape->push(Tape::Op::kSub, a.idx, b.idx, Tape::kNone, 0, 0.0,
                      a.value() - b.value());
}
inline Var operator-(Var a, double b) { return a + (-b); }
inline Var operator-(double a, Var b) {
  return b.tape->push(Tape::Op::kRsubImm, b.idx, 0, Tape::kNone, 0, a, a - b.value());
}
inline Var operator-(Var a) {
  return a.tape->push(Tape::Op::kNeg, a.idx, 0, Tape::kNone, 0, 0.0, -a.value());
}

inline Var operator*(Var a, Var b) {
  return a.tape->push(Tape::Op::kMul, a.idx, b.idx, Tape::kNone, 0, 0.0,
                      a.value() * b.value());
}
inline Var operator*(Var a, double b) {
  return a.tape->push(Tape::Op::kMulImm, a.idx, 0, Tape::kNone, 0, b, a.value() * b);
}
inline Var operator*(double a, Var b) { return b * a; }

inline Var operator/(Var a, Var b) {
  return a.tape->push(Tape::Op::kDiv, a.idx, b.idx, Tape::kNone, 0, 0.0,
                      a.value() / b.value());
}
inline Var operator/(Var a, double b) { return a * (1.0 / b); }

// a*b + c
inline Var fma(Var a, Var b, Var c) {
  return a.tape->push(Tape::Op::kFma, a.idx, b.idx, c.idx, 0, 0.0,
                      a.value() * b.value() + c.value());
}
// a*w + c
inline Var fma(Var a, double w, Var c) {
  return a.tape->push(Tape::Op::kFmaImm, a.idx, 0, c.idx, 0, w,
                      a.value() * w + c.value());
}

inline Var tanh(Var a) {
  return a.tape->push(Tape::Op::kTanh, a.idx, 0, Tape::kNone, 0, 0.0,
                      std::tanh(a.value()));
}
inline Var sigmoid(Var a) {
  const double y = 1.0 / (1.0 + std::exp(-a.value()));
  return a.tape->push(Tape::Op::kSigmoid, a.idx, 0, Tape::kNone, 0, 0.0, y);
}
inline Var exp(Var a) {
  return a.tape->push(Tape::Op::kExp, a.idx, 0, Tape::kNone, 0, 0.0,
                      std::exp(a.value()));
}
inline Var log(Var a) {
  return a.tape->push(Tape::Op::kLog, a.idx, 0, Tape::kNone, 0, 0.0,
                      std::log(a.value()));
}
inline Var sqr(Var a) {
  return a.tape->push(Tape::Op::kSqr, a.idx, 0, Tape::kNone, 0, 0.0,
                      a.value() * a.value());
}

// value-based selections; the pick is locally constant, so the gradient
// flows to the chosen branch only (subgradient at ties)
inline Var vmax(Var a, Var b) { return a.value() >= b.value() ? a : b; }

inline Var vclamp(Var x, double lo, double hi) {
  if (x.value() < lo) return x.tape->constant(lo);
  if (x.value() > hi) return x.tape->constant(hi);
  return x;
}

}  // namespace lr2
