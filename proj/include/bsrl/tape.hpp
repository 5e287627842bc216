#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bsrl/param_store.hpp"

namespace bsrl {

/// Handle to a node recorded on a Tape.
struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

enum class Unary : std::uint8_t { kTanh, kRelu, kReluSquare, kSoftplus, kSigmoid, kExp, kLog, kSquare, kRsqrt };

/// Reverse-mode recorder for the small vector primitive set the policies use.
///
/// Values live in one arena, so reset() reuses memory across steps and
/// episodes. Binary elementwise ops broadcast a length-1 operand. Parameter
/// reads come from the span passed at construction/reset; gradients are
/// accumulated into a caller-provided flat vector of the same size.
class Tape {
 public:
  Tape() = default;
  explicit Tape(std::span<const double> params) { reset(params); }

  void reset(std::span<const double> params);

  Var constant(std::span<const double> values);
  Var constant(double value);
  Var zeros(std::size_t n);

  /// Leaf reading a parameter slice as a flat vector.
  Var param(const Slice& s);
  /// W x for W a rows x cols slice.
  Var matvec(const Slice& w, Var x);
  /// W x + b.
  Var affine(const Slice& w, const Slice& b, Var x);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var scale(Var a, double k);
  Var shift(Var a, double c);
  Var unary(Unary op, Var a);
  Var tanh(Var a) { return unary(Unary::kTanh, a); }
  Var sigmoid(Var a) { return unary(Unary::kSigmoid, a); }
  Var exp(Var a) { return unary(Unary::kExp, a); }
  Var log(Var a) { return unary(Unary::kLog, a); }
  Var square(Var a) { return unary(Unary::kSquare, a); }

  Var concat(Var a, Var b);
  Var slice(Var a, std::size_t offset, std::size_t len);
  Var sum(Var a);
  Var pick(Var a, std::size_t index);
  Var log_softmax(Var logits);

  std::size_t dim(Var v) const;
  std::span<const double> value(Var v) const;
  double item(Var v) const;
  std::size_t node_count() const { return nodes_.size(); }

  /// Accumulates seed * d(root)/d(params) into param_grad. root must be a
  /// scalar recorded on this tape.
  void backward(Var root, std::span<double> param_grad, double seed = 1.0);

 private:
  enum class Op : std::uint8_t {
    kConstant, kParam, kMatVec, kAffine, kAdd, kSub, kMul, kDiv, kScale, kShift,
    kUnary, kConcat, kSlice, kSum, kPick, kLogSoftmax,
  };

  struct Node {
    Op op = Op::kConstant;
    Unary unary = Unary::kTanh;
    std::uint32_t a = 0;
    std::uint32_t b = 0;
    std::uint32_t offset = 0;  // into the value arena
    std::uint32_t len = 0;
    Slice w;                   // param slice (param / matvec / affine weight)
    Slice bias;                // affine bias
    double k = 0.0;            // scale/shift constant, slice offset, pick index
  };

  Var push(Node node);
  const Node& node(Var v) const;
  double* val(std::uint32_t id) { return values_.data() + nodes_[id].offset; }
  const double* val(std::uint32_t id) const { return values_.data() + nodes_[id].offset; }
  double* grad(std::uint32_t id) { return grads_.data() + nodes_[id].offset; }
  Var binary(Op op, Var a, Var b);
  void check_params(const Slice& s) const;

  std::span<const double> params_;
  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::vector<double> grads_;
};

}  // namespace bsrl
