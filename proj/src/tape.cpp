#include "bsrl/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bsrl/errors.hpp"

namespace bsrl {

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double logistic(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void Tape::reset(std::span<const double> params) {
  params_ = params;
  nodes_.clear();
  values_.clear();
  grads_.clear();
}

Var Tape::push(Node node) {
  node.offset = static_cast<std::uint32_t>(values_.size());
  values_.resize(values_.size() + node.len, 0.0);
  nodes_.push_back(node);
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) {
    throw ContractViolation("variable does not belong to this tape");
  }
  return nodes_[v.id];
}

void Tape::check_params(const Slice& s) const {
  if (s.offset + s.size() > params_.size()) {
    throw ContractViolation("parameter slice out of range of the tape's parameter vector");
  }
}

Var Tape::constant(std::span<const double> values) {
  Node n;
  n.op = Op::kConstant;
  n.len = static_cast<std::uint32_t>(values.size());
  Var v = push(n);
  std::copy(values.begin(), values.end(), val(v.id));
  return v;
}

Var Tape::constant(double value) { return constant(std::span<const double>(&value, 1)); }

Var Tape::zeros(std::size_t n) {
  Node node;
  node.op = Op::kConstant;
  node.len = static_cast<std::uint32_t>(n);
  return push(node);
}

Var Tape::param(const Slice& s) {
  check_params(s);
  Node n;
  n.op = Op::kParam;
  n.w = s;
  n.len = static_cast<std::uint32_t>(s.size());
  Var v = push(n);
  std::copy_n(params_.data() + s.offset, s.size(), val(v.id));
  return v;
}

Var Tape::matvec(const Slice& w, Var x) {
  check_params(w);
  if (node(x).len != w.cols) {
    throw ContractViolation("matvec: weight has " + std::to_string(w.cols) + " columns but input has " +
                            std::to_string(node(x).len) + " entries");
  }
  Node n;
  n.op = Op::kMatVec;
  n.a = x.id;
  n.w = w;
  n.len = static_cast<std::uint32_t>(w.rows);
  Var v = push(n);
  const double* W = params_.data() + w.offset;
  const double* xv = val(x.id);
  double* y = val(v.id);
  for (std::size_t r = 0; r < w.rows; ++r) {
    double acc = 0.0;
    const double* row = W + r * w.cols;
    for (std::size_t c = 0; c < w.cols; ++c) {
      acc += row[c] * xv[c];
    }
    y[r] = acc;
  }
  return v;
}

Var Tape::affine(const Slice& w, const Slice& b, Var x) {
  check_params(b);
  if (b.size() != w.rows) {
    throw ContractViolation("affine: bias length does not match weight rows");
  }
  Var v = matvec(w, x);
  Node& n = nodes_[v.id];
  n.op = Op::kAffine;
  n.bias = b;
  double* y = val(v.id);
  const double* bv = params_.data() + b.offset;
  for (std::size_t r = 0; r < w.rows; ++r) {
    y[r] += bv[r];
  }
  return v;
}

Var Tape::binary(Op op, Var a, Var b) {
  const std::uint32_t la = node(a).len;
  const std::uint32_t lb = node(b).len;
  if (la != lb && la != 1 && lb != 1) {
    throw ContractViolation("elementwise op on lengths " + std::to_string(la) + " and " + std::to_string(lb));
  }
  Node n;
  n.op = op;
  n.a = a.id;
  n.b = b.id;
  n.len = std::max(la, lb);
  Var v = push(n);
  const double* x = val(a.id);
  const double* y = val(b.id);
  double* out = val(v.id);
  const std::size_t sa = la == 1 ? 0 : 1;
  const std::size_t sb = lb == 1 ? 0 : 1;
  for (std::size_t i = 0; i < n.len; ++i) {
    const double p = x[i * sa];
    const double q = y[i * sb];
    switch (op) {
      case Op::kAdd: out[i] = p + q; break;
      case Op::kSub: out[i] = p - q; break;
      case Op::kMul: out[i] = p * q; break;
      case Op::kDiv: out[i] = p / q; break;
      default: throw ContractViolation("not a binary op");
    }
  }
  return v;
}

Var Tape::add(Var a, Var b) { return binary(Op::kAdd, a, b); }
Var Tape::sub(Var a, Var b) { return binary(Op::kSub, a, b); }
Var Tape::mul(Var a, Var b) { return binary(Op::kMul, a, b); }
Var Tape::div(Var a, Var b) { return binary(Op::kDiv, a, b); }

Var Tape::scale(Var a, double k) {
  Node n;
  n.op = Op::kScale;
  n.a = a.id;
  n.k = k;
  n.len = node(a).len;
  Var v = push(n);
  const double* x = val(a.id);
  double* y = val(v.id);
  for (std::size_t i = 0; i < n.len; ++i) {
    y[i] = k * x[i];
  }
  return v;
}

Var Tape::shift(Var a, double c) {
  Node n;
  n.op = Op::kShift;
  n.a = a.id;
  n.k = c;
  n.len = node(a).len;
  Var v = push(n);
  const double* x = val(a.id);
  double* y = val(v.id);
  for (std::size_t i = 0; i < n.len; ++i) {
    y[i] = x[i] + c;
  }
  return v;
}

Var Tape::unary(Unary op, Var a) {
  Node n;
  n.op = Op::kUnary;
  n.unary = op;
  n.a = a.id;
  n.len = node(a).len;
  Var v = push(n);
  const double* x = val(a.id);
  double* y = val(v.id);
  for (std::size_t i = 0; i < n.len; ++i) {
    switch (op) {
      case Unary::kTanh: y[i] = std::tanh(x[i]); break;
      case Unary::kRelu: y[i] = x[i] > 0.0 ? x[i] : 0.0; break;
      case Unary::kReluSquare: y[i] = x[i] > 0.0 ? x[i] * x[i] : 0.0; break;
      case Unary::kSoftplus: y[i] = softplus(x[i]); break;
      case Unary::kSigmoid: y[i] = logistic(x[i]); break;
      case Unary::kExp: y[i] = std::exp(x[i]); break;
      case Unary::kLog: y[i] = std::log(x[i]); break;
      case Unary::kSquare: y[i] = x[i] * x[i]; break;
      case Unary::kRsqrt: y[i] = 1.0 / std::sqrt(x[i]); break;
    }
  }
  return v;
}

Var Tape::concat(Var a, Var b) {
  Node n;
  n.op = Op::kConcat;
  n.a = a.id;
  n.b = b.id;
  const std::uint32_t la = node(a).len;
  n.len = la + node(b).len;
  Var v = push(n);
  double* y = val(v.id);
  std::copy_n(val(a.id), la, y);
  std::copy_n(val(b.id), n.len - la, y + la);
  return v;
}

Var Tape::slice(Var a, std::size_t offset, std::size_t len) {
  if (offset + len > node(a).len || len == 0) {
    throw ContractViolation("slice out of range");
  }
  Node n;
  n.op = Op::kSlice;
  n.a = a.id;
  n.k = static_cast<double>(offset);
  n.len = static_cast<std::uint32_t>(len);
  Var v = push(n);
  std::copy_n(val(a.id) + offset, len, val(v.id));
  return v;
}

Var Tape::sum(Var a) {
  Node n;
  n.op = Op::kSum;
  n.a = a.id;
  n.len = 1;
  const std::uint32_t la = node(a).len;
  Var v = push(n);
  const double* x = val(a.id);
  double acc = 0.0;
  for (std::size_t i = 0; i < la; ++i) {
    acc += x[i];
  }
  *val(v.id) = acc;
  return v;
}

Var Tape::pick(Var a, std::size_t index) {
  if (index >= node(a).len) {
    throw ContractViolation("pick index out of range");
  }
  Node n;
  n.op = Op::kPick;
  n.a = a.id;
  n.k = static_cast<double>(index);
  n.len = 1;
  Var v = push(n);
  *val(v.id) = val(a.id)[index];
  return v;
}

Var Tape::log_softmax(Var logits) {
  Node n;
  n.op = Op::kLogSoftmax;
  n.a = logits.id;
  n.len = node(logits).len;
  Var v = push(n);
  const double* x = val(logits.id);
  double* y = val(v.id);
  const double m = *std::max_element(x, x + n.len);
  double z = 0.0;
  for (std::size_t i = 0; i < n.len; ++i) {
    z += std::exp(x[i] - m);
  }
  const double lse = m + std::log(z);
  for (std::size_t i = 0; i < n.len; ++i) {
    y[i] = x[i] - lse;
  }
  return v;
}

std::size_t Tape::dim(Var v) const { return node(v).len; }

std::span<const double> Tape::value(Var v) const {
  const Node& n = node(v);
  return {values_.data() + n.offset, n.len};
}

double Tape::item(Var v) const {
  const Node& n = node(v);
  if (n.len != 1) {
    throw ContractViolation("item() on a non-scalar variable");
  }
  return values_[n.offset];
}

void Tape::backward(Var root, std::span<double> param_grad, double seed) {
  if (nodes_.empty()) {
    throw ContractViolation("backward() called before any forward computation");
  }
  if (node(root).len != 1) {
    throw ContractViolation("backward() root must be a scalar");
  }
  if (param_grad.size() != params_.size()) {
    throw ContractViolation("gradient buffer does not match the parameter count");
  }
  grads_.assign(values_.size(), 0.0);
  *grad(root.id) = seed;

  for (std::size_t id = root.id + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    const double* g = grads_.data() + n.offset;
    const double* y = values_.data() + n.offset;
    switch (n.op) {
      case Op::kConstant:
        break;
      case Op::kParam: {
        double* pg = param_grad.data() + n.w.offset;
        for (std::size_t i = 0; i < n.len; ++i) {
          pg[i] += g[i];
        }
        break;
      }
      case Op::kAffine: {
        double* gb = param_grad.data() + n.bias.offset;
        for (std::size_t r = 0; r < n.len; ++r) {
          gb[r] += g[r];
        }
        [[fallthrough]];
      }
      case Op::kMatVec: {
        const double* W = params_.data() + n.w.offset;
        double* gW = param_grad.data() + n.w.offset;
        const double* x = val(n.a);
        double* gx = grad(n.a);
        const std::size_t cols = n.w.cols;
        for (std::size_t r = 0; r < n.len; ++r) {
          const double gr = g[r];
          if (gr == 0.0) {
            continue;
          }
          const double* row = W + r * cols;
          double* grow = gW + r * cols;
          for (std::size_t c = 0; c < cols; ++c) {
            grow[c] += gr * x[c];
            gx[c] += gr * row[c];
          }
        }
        break;
      }
      case Op::kAdd:
      case Op::kSub:
      case Op::kMul:
      case Op::kDiv: {
        const std::size_t sa = nodes_[n.a].len == 1 ? 0 : 1;
        const std::size_t sb = nodes_[n.b].len == 1 ? 0 : 1;
        const double* xa = val(n.a);
        const double* xb = val(n.b);
        double* ga = grad(n.a);
        double* gb = grad(n.b);
        for (std::size_t i = 0; i < n.len; ++i) {
          const double p = xa[i * sa];
          const double q = xb[i * sb];
          switch (n.op) {
            case Op::kAdd: ga[i * sa] += g[i]; gb[i * sb] += g[i]; break;
            case Op::kSub: ga[i * sa] += g[i]; gb[i * sb] -= g[i]; break;
            case Op::kMul: ga[i * sa] += g[i] * q; gb[i * sb] += g[i] * p; break;
            default: ga[i * sa] += g[i] / q; gb[i * sb] -= g[i] * p / (q * q); break;
          }
        }
        break;
      }
      case Op::kScale: {
        double* ga = grad(n.a);
        for (std::size_t i = 0; i < n.len; ++i) {
          ga[i] += n.k * g[i];
        }
        break;
      }
      case Op::kShift: {
        double* ga = grad(n.a);
        for (std::size_t i = 0; i < n.len; ++i) {
          ga[i] += g[i];
        }
        break;
      }
      case Op::kUnary: {
        const double* x = val(n.a);
        double* ga = grad(n.a);
        for (std::size_t i = 0; i < n.len; ++i) {
          double d = 0.0;
          switch (n.unary) {
            case Unary::kTanh: d = 1.0 - y[i] * y[i]; break;
            case Unary::kRelu: d = x[i] > 0.0 ? 1.0 : 0.0; break;
            case Unary::kReluSquare: d = x[i] > 0.0 ? 2.0 * x[i] : 0.0; break;
            case Unary::kSoftplus: d = logistic(x[i]); break;
            case Unary::kSigmoid: d = y[i] * (1.0 - y[i]); break;
            case Unary::kExp: d = y[i]; break;
            case Unary::kLog: d = 1.0 / x[i]; break;
            case Unary::kSquare: d = 2.0 * x[i]; break;
            case Unary::kRsqrt: d = -0.5 * y[i] * y[i] * y[i]; break;
          }
          ga[i] += g[i] * d;
        }
        break;
      }
      case Op::kConcat: {
        const std::uint32_t la = nodes_[n.a].len;
        double* ga = grad(n.a);
        double* gb = grad(n.b);
        for (std::size_t i = 0; i < la; ++i) {
          ga[i] += g[i];
        }
        for (std::size_t i = la; i < n.len; ++i) {
          gb[i - la] += g[i];
        }
        break;
      }
      case Op::kSlice: {
        double* ga = grad(n.a) + static_cast<std::size_t>(n.k);
        for (std::size_t i = 0; i < n.len; ++i) {
          ga[i] += g[i];
        }
        break;
      }
      case Op::kSum: {
        double* ga = grad(n.a);
        const std::uint32_t la = nodes_[n.a].len;
        for (std::size_t i = 0; i < la; ++i) {
          ga[i] += g[0];
        }
        break;
      }
      case Op::kPick:
        grad(n.a)[static_cast<std::size_t>(n.k)] += g[0];
        break;
      case Op::kLogSoftmax: {
        double gsum = 0.0;
        for (std::size_t i = 0; i < n.len; ++i) {
          gsum += g[i];
        }
        double* ga = grad(n.a);
        for (std::size_t i = 0; i < n.len; ++i) {
          ga[i] += g[i] - std::exp(y[i]) * gsum;
        }
        break;
      }
    }
  }
}

}  // namespace bsrl
