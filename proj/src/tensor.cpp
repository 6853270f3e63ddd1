#include "fewshot/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fewshot::ad {

size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (size_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void check_shape_valid(const Shape& s) {
  for (size_t e : s) require(e > 0, "tensor extents must be positive, got " + shape_str(s));
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x))
      throw std::runtime_error(std::string(op) + ": non-finite value in forward result");
  }
}

Tape* resolve_tape(const Tensor& a) {
  Tape* t = a.tape();
  return (t && !t->recording()) ? nullptr : t;
}

Tape* resolve_tape(const Tensor& a, const Tensor& b) {
  Tape* t = a.on_tape() ? a.tape() : (b.on_tape() ? b.tape() : nullptr);
  if (a.on_tape() && b.on_tape() && a.tape() != b.tape())
    throw std::logic_error("operands live on different tapes");
  return (t && !t->recording()) ? nullptr : t;
}

Tensor make_result(Tape* tape, Shape shape, std::vector<double> data, Tape::BackwardFn fn,
                   const char* op) {
  check_finite(data, op);
  if (tape) return tape->emit(std::move(shape), std::move(data), std::move(fn), op);
  auto ptr = std::make_shared<std::vector<double>>(std::move(data));
  return Tensor(std::move(shape), std::move(ptr), nullptr, -1);
}

bool is_scalar(const Tensor& t) { return t.size() == 1 && t.rank() == 0; }

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::constant(Shape shape, std::vector<double> data) {
  check_shape_valid(shape);
  require(shape_numel(shape) == data.size(),
          "data length " + std::to_string(data.size()) + " does not match shape " +
              shape_str(shape));
  check_finite(data, "constant");
  auto ptr = std::make_shared<std::vector<double>>(std::move(data));
  return Tensor(std::move(shape), std::move(ptr), nullptr, -1);
}

Tensor Tensor::scalar(double v) { return constant({}, {v}); }

Tensor Tensor::zeros(Shape shape) {
  const size_t n = shape_numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

double Tensor::value() const {
  if (size() != 1) throw std::invalid_argument("value() on non-scalar tensor " + shape_str(shape_));
  return (*data_)[0];
}

// ---- ParameterStore ---------------------------------------------------------

Parameter& ParameterStore::create(const std::string& name, Shape shape, std::vector<double> init,
                                  bool trainable) {
  require(!params_.count(name), "duplicate parameter name: " + name);
  check_shape_valid(shape);
  require(shape_numel(shape) == init.size(), "parameter " + name + " init size mismatch");
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->shape = std::move(shape);
  p->value = std::move(init);
  p->trainable = trainable;
  auto& ref = *p;
  params_.emplace(name, std::move(p));
  order_.push_back(name);
  return ref;
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  require(it != params_.end(), "unknown parameter: " + name);
  return *it->second;
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  require(it != params_.end(), "unknown parameter: " + name);
  return *it->second;
}

bool ParameterStore::contains(const std::string& name) const { return params_.count(name) > 0; }

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(order_.size());
  for (const auto& n : order_) out.push_back(params_.at(n).get());
  return out;
}

const std::vector<double>& Gradients::of(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw std::invalid_argument("no gradient for parameter: " + name);
  return it->second;
}

// ---- Tape -------------------------------------------------------------------

Tensor Tape::leaf(Shape shape, std::vector<double> data) {
  check_shape_valid(shape);
  require(shape_numel(shape) == data.size(), "leaf data does not match shape " + shape_str(shape));
  check_finite(data, "leaf");
  return emit(std::move(shape), std::move(data), nullptr, "leaf");
}

Tensor Tape::param(const Parameter& p) {
  // leaves alias the parameter storage instead of copying it; the parameter
  // must stay untouched between forward and backward of one tape
  auto alias = std::shared_ptr<std::vector<double>>(std::shared_ptr<void>{},
                                                    const_cast<std::vector<double>*>(&p.value));
  Tensor t = emit_shared(p.shape, std::move(alias), nullptr);
  if (t.node() >= 0) param_leaves_.emplace_back(t.node(), &p);
  return t;
}

Tensor Tape::emit(Shape shape, std::vector<double> data, BackwardFn backward, const char*) {
  return emit_shared(std::move(shape), std::make_shared<std::vector<double>>(std::move(data)),
                     std::move(backward));
}

Tensor Tape::emit_shared(Shape shape, std::shared_ptr<std::vector<double>> data,
                         BackwardFn backward) {
  if (!recording_) return Tensor(std::move(shape), std::move(data), nullptr, -1);
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{data->size(), std::move(backward)});
  return Tensor(std::move(shape), std::move(data), this, id);
}

void Tape::accumulate(int node, const double* grad, size_t n) {
  if (node < 0) return;
  auto& buf = grads_[static_cast<size_t>(node)];
  if (buf.empty()) buf.assign(nodes_[static_cast<size_t>(node)].numel, 0.0);
  for (size_t i = 0; i < n; ++i) buf[i] += grad[i];
}

void Tape::accumulate_at(int node, size_t index, double g) {
  if (node < 0) return;
  auto& buf = grads_[static_cast<size_t>(node)];
  if (buf.empty()) buf.assign(nodes_[static_cast<size_t>(node)].numel, 0.0);
  buf[index] += g;
}

Gradients Tape::backward(const Tensor& root) {
  if (root.size() != 1)
    throw std::invalid_argument("backward: root must be scalar, got " + shape_str(root.shape()));
  grads_.assign(nodes_.size(), {});
  if (root.on_tape()) {
    if (root.tape() != this) throw std::logic_error("backward: root from a different tape");
    grads_[static_cast<size_t>(root.node())] = {1.0};
    for (int id = root.node(); id >= 0; --id) {
      auto& g = grads_[static_cast<size_t>(id)];
      if (g.empty()) continue;
      if (nodes_[static_cast<size_t>(id)].backward) nodes_[static_cast<size_t>(id)].backward(g, *this);
    }
  }
  Gradients out;
  for (const auto& [node, p] : param_leaves_) {
    if (!p->trainable) continue;
    const auto& g = grads_[static_cast<size_t>(node)];
    auto& dst = out.by_name_[p->name];
    if (dst.empty()) dst.assign(p->size(), 0.0);
    if (!g.empty())
      for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }
  return out;
}

std::vector<double> Tape::grad_of(const Tensor& t) const {
  if (!t.on_tape() || t.tape() != this) return {};
  const auto& g = grads_[static_cast<size_t>(t.node())];
  if (g.empty()) return std::vector<double>(t.size(), 0.0);
  return g;
}

// ---- elementwise helpers ----------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, const char* name, Fwd fwd, Bwd grad_factor) {
  const auto& x = a.data();
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  Tape* tape = resolve_tape(a);
  Tape::BackwardFn fn;
  if (tape && a.on_tape()) {
    fn = [a, grad_factor](const std::vector<double>& g, Tape& t) {
      const auto& x = a.data();
      std::vector<double> gx(x.size());
      for (size_t i = 0; i < x.size(); ++i) gx[i] = g[i] * grad_factor(x[i]);
      t.accumulate(a.node(), gx.data(), gx.size());
    };
  }
  return make_result(tape, a.shape(), std::move(out), std::move(fn), name);
}

template <typename Fwd, typename BwdA, typename BwdB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, BwdA da, BwdB db) {
  require(a.shape() == b.shape(), std::string(name) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  const auto& x = a.data();
  const auto& y = b.data();
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i], y[i]);
  Tape* tape = resolve_tape(a, b);
  Tape::BackwardFn fn;
  if (tape) {
    fn = [a, b, da, db](const std::vector<double>& g, Tape& t) {
      const auto& x = a.data();
      const auto& y = b.data();
      if (a.node() >= 0) {
        std::vector<double> gx(x.size());
        for (size_t i = 0; i < x.size(); ++i) gx[i] = g[i] * da(x[i], y[i]);
        t.accumulate(a.node(), gx.data(), gx.size());
      }
      if (b.node() >= 0) {
        std::vector<double> gy(y.size());
        for (size_t i = 0; i < y.size(); ++i) gy[i] = g[i] * db(x[i], y[i]);
        t.accumulate(b.node(), gy.data(), gy.size());
      }
    };
  }
  return make_result(tape, a.shape(), std::move(out), std::move(fn), name);
}

}  // namespace

// ---- ops --------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor neg(const Tensor& a) {
  return unary_op(
      a, "neg", [](double x) { return -x; }, [](double) { return -1.0; });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double x) {
        const double t = std::tanh(x);
        return 1.0 - t * t;
      });
}

namespace {
// branch on sign so exp never overflows
double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, "sigmoid", stable_sigmoid,
      [](double x) {
        const double s = stable_sigmoid(x);
        return s * (1.0 - s);
      });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      a, "exp", [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Tensor log(const Tensor& a) {
  for (double x : a.data())
    if (x <= 0.0) throw std::domain_error("log: operand must be positive, got " + std::to_string(x));
  return unary_op(
      a, "log", [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  for (double x : a.data())
    if (x < 0.0) throw std::domain_error("sqrt: operand must be non-negative");
  // subgradient 0 at the origin kink
  return unary_op(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double x) { return x == 0.0 ? 0.0 : 0.5 / std::sqrt(x); });
}

Tensor pow(const Tensor& a, double p) {
  for (double x : a.data()) {
    if (x < 0.0 && p != std::floor(p))
      throw std::domain_error("pow: negative base with non-integer exponent");
    if (x == 0.0 && p < 0.0) throw std::domain_error("pow: zero base with negative exponent");
  }
  return unary_op(
      a, "pow", [p](double x) { return std::pow(x, p); },
      [p](double x) {
        if (x == 0.0) {
          // subgradient 0 at the kink; exact for p > 1, convention for p < 1
          return p == 1.0 ? 1.0 : 0.0;
        }
        return p * std::pow(x, p - 1.0);
      });
}

Tensor abs(const Tensor& a) {
  // subgradient at 0 defined as 0
  return unary_op(
      a, "abs", [](double x) { return std::fabs(x); },
      [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor scale(const Tensor& a, const Tensor& s) {
  require(is_scalar(s), "scale: second operand must be scalar");
  const double sv = s.value();
  const auto& x = a.data();
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * sv;
  Tape* tape = resolve_tape(a, s);
  Tape::BackwardFn fn;
  if (tape) {
    fn = [a, s](const std::vector<double>& g, Tape& t) {
      const double sv = s.value();
      if (a.node() >= 0) {
        std::vector<double> gx(g.size());
        for (size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * sv;
        t.accumulate(a.node(), gx.data(), gx.size());
      }
      if (s.node() >= 0) {
        double gs = 0.0;
        const auto& x = a.data();
        for (size_t i = 0; i < g.size(); ++i) gs += g[i] * x[i];
        t.accumulate(s.node(), &gs, 1);
      }
    };
  }
  return make_result(tape, a.shape(), std::move(out), std::move(fn), "scale");
}

Tensor clamp_min(const Tensor& a, double floor) {
  return unary_op(
      a, "clamp_min", [floor](double x) { return x < floor ? floor : x; },
      [floor](double x) { return x > floor ? 1.0 : 0.0; });
}

Tensor clamp_max(const Tensor& a, double ceil) {
  return unary_op(
      a, "clamp_max", [ceil](double x) { return x > ceil ? ceil : x; },
      [ceil](double x) { return x < ceil ? 1.0 : 0.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: operands must be rank 2, got " +
                                              shape_str(a.shape()) + " and " + shape_str(b.shape()));
  require(a.shape()[1] == b.shape()[0], "matmul: inner extents differ, " + shape_str(a.shape()) +
                                            " vs " + shape_str(b.shape()));
  const size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  const auto& A = a.data();
  const auto& B = b.data();
  std::vector<double> C(m * n, 0.0);
  for (size_t i = 0; i < m; ++i)
    for (size_t kk = 0; kk < k; ++kk) {
      const double aik = A[i * k + kk];
      const double* brow = B.data() + kk * n;
      double* crow = C.data() + i * n;
      for (size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  Tape* tape = resolve_tape(a, b);
  Tape::BackwardFn fn;
  if (tape) {
    fn = [a, b, m, k, n](const std::vector<double>& g, Tape& t) {
      const auto& A = a.data();
      const auto& B = b.data();
      if (a.node() >= 0) {
        // dA = dC · B^T
        std::vector<double> dA(m * k, 0.0);
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j) {
            const double gij = g[i * n + j];
            const double* brow = B.data() + 0 * n + j;
            for (size_t kk = 0; kk < k; ++kk) dA[i * k + kk] += gij * brow[kk * n];
          }
        t.accumulate(a.node(), dA.data(), dA.size());
      }
      if (b.node() >= 0) {
        // dB = A^T · dC
        std::vector<double> dB(k * n, 0.0);
        for (size_t i = 0; i < m; ++i)
          for (size_t kk = 0; kk < k; ++kk) {
            const double aik = A[i * k + kk];
            const double* grow = g.data() + i * n;
            double* drow = dB.data() + kk * n;
            for (size_t j = 0; j < n; ++j) drow[j] += aik * grow[j];
          }
        t.accumulate(b.node(), dB.data(), dB.size());
      }
    };
  }
  return make_result(tape, {m, n}, std::move(C), std::move(fn), "matmul");
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose: rank-2 tensor required");
  const size_t m = a.shape()[0], n = a.shape()[1];
  const auto& A = a.data();
  std::vector<double> out(n * m);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  Tape* tape = resolve_tape(a);
  Tape::BackwardFn fn;
  if (tape && a.on_tape()) {
    fn = [a, m, n](const std::vector<double>& g, Tape& t) {
      std::vector<double> gx(m * n);
      for (size_t j = 0; j < n; ++j)
        for (size_t i = 0; i < m; ++i) gx[i * n + j] = g[j * m + i];
      t.accumulate(a.node(), gx.data(), gx.size());
    };
  }
  return make_result(tape, {n, m}, std::move(out), std::move(fn), "transpose");
}

Tensor softmax_rows(const Tensor& x) {
  require(x.rank() == 1 || x.rank() == 2, "softmax_rows: rank 1 or 2 required");
  const size_t rows = x.rank() == 2 ? x.shape()[0] : 1;
  const size_t cols = x.rank() == 2 ? x.shape()[1] : x.shape()[0];
  const auto& in = x.data();
  std::vector<double> out(in.size());
  for (size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * cols;
    double* orow = out.data() + r * cols;
    double mx = row[0];
    for (size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (size_t j = 0; j < cols; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (size_t j = 0; j < cols; ++j) orow[j] /= sum;
  }
  Tape* tape = resolve_tape(x);
  Tape::BackwardFn fn;
  if (tape && x.on_tape()) {
    auto saved = std::make_shared<std::vector<double>>(out);
    fn = [x, saved, rows, cols](const std::vector<double>& g, Tape& t) {
      std::vector<double> gx(g.size());
      for (size_t r = 0; r < rows; ++r) {
        const double* y = saved->data() + r * cols;
        const double* gr = g.data() + r * cols;
        double dot = 0.0;
        for (size_t j = 0; j < cols; ++j) dot += gr[j] * y[j];
        for (size_t j = 0; j < cols; ++j) gx[r * cols + j] = y[j] * (gr[j] - dot);
      }
      t.accumulate(x.node(), gx.data(), gx.size());
    };
  }
  return make_result(tape, x.shape(), std::move(out), std::move(fn), "softmax_rows");
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tape* tape = resolve_tape(x);
  Tape::BackwardFn fn;
  if (tape && x.on_tape()) {
    fn = [x](const std::vector<double>& g, Tape& t) {
      std::vector<double> gx(x.size(), g[0]);
      t.accumulate(x.node(), gx.data(), gx.size());
    };
  }
  return make_result(tape, {}, {s}, std::move(fn), "sum_all");
}

Tensor mean_all(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tape* tape = resolve_tape(x);
  Tape::BackwardFn fn;
  if (tape && x.on_tape()) {
    fn = [x, n](const std::vector<double>& g, Tape& t) {
      std::vector<double> gx(x.size(), g[0] / n);
      t.accumulate(x.node(), gx.data(), gx.size());
    };
  }
  return make_result(tape, {}, {s / n}, std::move(fn), "mean_all");
}

namespace {

// shared frame for axis reductions over rank-1/rank-2 tensors
struct AxisView {
  size_t groups;  // number of output elements
  size_t span;    // elements reduced per group
  size_t outer_stride, inner_stride;
};

AxisView axis_view(const Tensor& x, size_t axis, const char* op) {
  require(axis < std::max<size_t>(x.rank(), 1),
          std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
              shape_str(x.shape()));
  require(x.rank() >= 1 && x.rank() <= 2, std::string(op) + ": rank 1 or 2 required");
  if (x.rank() == 1) return {1, x.shape()[0], 0, 1};
  const size_t m = x.shape()[0], n = x.shape()[1];
  if (axis == 0) return {n, m, 1, n};  // reduce down columns
  return {m, n, n, 1};                 // reduce across rows
}

Shape reduced_shape(const Tensor& x, size_t axis) {
  if (x.rank() == 1) return {};
  return {x.shape()[axis == 0 ? 1 : 0]};
}

}  // namespace

Tensor sum_axis(const Tensor& x, size_t axis) {
  const AxisView v = axis_view(x, axis, "sum_axis");
  const auto& in = x.data();
  std::vector<double> out(v.groups, 0.0);
  for (size_t g = 0; g < v.groups; ++g)
    for (size_t i = 0; i < v.span; ++i) out[g] += in[g * v.outer_stride + i * v.inner_stride];
  Tape* tape = resolve_tape(x);
  Tape::BackwardFn fn;
  if (tape && x.on_tape()) {
    fn = [x, v](const std::vector<double>& g, Tape& t) {
      std::vector<double> gx(x.size(), 0.0);
      for (size_t grp = 0; grp < v.groups; ++grp)
        for (size_t i = 0; i < v.span; ++i)
          gx[grp * v.outer_stride + i * v.inner_stride] += g[grp];
      t.accumulate(x.node(), gx.data(), gx.size());
    };
  }
  return make_result(tape, reduced_shape(x, axis), std::move(out), std::move(fn), "sum_axis");
}

Tensor mean_axis(const Tensor& x, size_t axis) {
  const AxisView v = axis_view(x, axis, "mean_axis");
  const double span = static_cast<double>(v.span);
  const auto& in = x.data();
  std::vector<double> out(v.groups, 0.0);
  for (size_t g = 0; g < v.groups; ++g) {
    for (size_t i = 0; i < v.span; ++i) out[g] += in[g * v.outer_stride + i * v.inner_stride];
    out[g] /= span;
  }
  Tape* tape = resolve_tape(x);
  Tape::BackwardFn fn;
  if (tape && x.on_tape()) {
    fn = [x, v, span](const std::vector<double>& g, Tape& t) {
      std::vector<double> gx(x.size(), 0.0);
      for (size_t grp = 0; grp < v.groups; ++grp)
        for (size_t i = 0; i < v.span; ++i)
          gx[grp * v.outer_stride + i * v.inner_stride] += g[grp] / span;
      t.accumulate(x.node(), gx.data(), gx.size());
    };
  }
  return make_result(tape, reduced_shape(x, axis), std::move(out), std::move(fn), "mean_axis");
}

Tensor max_axis(const Tensor& x, size_t axis) {
  const AxisView v = axis_view(x, axis, "max_axis");
  const auto& in = x.data();
  std::vector<double> out(v.groups);
  auto winners = std::make_shared<std::vector<size_t>>(v.groups);
  for (size_t g = 0; g < v.groups; ++g) {
    size_t best = g * v.outer_stride;
    for (size_t i = 1; i < v.span; ++i) {
      const size_t idx = g * v.outer_stride + i * v.inner_stride;
      if (in[idx] > in[best]) best = idx;  // strict: ties keep the lowest index
    }
    out[g] = in[best];
    (*winners)[g] = best;
  }
  Tape* tape = resolve_tape(x);
  Tape::BackwardFn fn;
  if (tape && x.on_tape()) {
    fn = [x, winners](const std::vector<double>& g, Tape& t) {
      for (size_t grp = 0; grp < winners->size(); ++grp)
        t.accumulate_at(x.node(), (*winners)[grp], g[grp]);
    };
  }
  return make_result(tape, reduced_shape(x, axis), std::move(out), std::move(fn), "max_axis");
}

Tensor concat(const std::vector<Tensor>& xs, size_t axis) {
  require(!xs.empty(), "concat: empty input list");
  if (xs.size() == 1) return xs[0];
  const size_t rank = xs[0].rank();
  require(rank >= 1 && rank <= 2, "concat: rank 1 or 2 required");
  require(axis < rank, "concat: axis out of range");
  size_t axis_total = 0;
  for (const auto& t : xs) {
    require(t.rank() == rank, "concat: rank mismatch");
    for (size_t d = 0; d < rank; ++d)
      if (d != axis)
        require(t.shape()[d] == xs[0].shape()[d],
                "concat: non-axis extent mismatch " + shape_str(t.shape()) + " vs " +
                    shape_str(xs[0].shape()));
    axis_total += t.shape()[axis];
  }
  Shape out_shape = xs[0].shape();
  out_shape[axis] = axis_total;

  std::vector<double> out(shape_numel(out_shape));
  // copy interleaved for axis-1, contiguous for axis-0
  if (rank == 1 || axis == 0) {
    size_t off = 0;
    for (const auto& t : xs) {
      std::copy(t.data().begin(), t.data().end(), out.begin() + static_cast<long>(off));
      off += t.size();
    }
  } else {
    const size_t rows = out_shape[0];
    size_t col_off = 0;
    for (const auto& t : xs) {
      const size_t tc = t.shape()[1];
      for (size_t r = 0; r < rows; ++r)
        std::copy(t.data().begin() + static_cast<long>(r * tc),
                  t.data().begin() + static_cast<long>((r + 1) * tc),
                  out.begin() + static_cast<long>(r * axis_total + col_off));
      col_off += tc;
    }
  }

  Tape* tape = nullptr;
  for (const auto& t : xs)
    if (t.on_tape()) {
      if (tape && t.tape() != tape) throw std::logic_error("concat: mixed tapes");
      tape = t.tape();
    }
  Tape::BackwardFn fn;
  if (tape) {
    auto parts = xs;
    fn = [parts, rank, axis, axis_total](const std::vector<double>& g, Tape& t) {
      if (rank == 1 || axis == 0) {
        size_t off = 0;
        for (const auto& p : parts) {
          t.accumulate(p.node(), g.data() + off, p.size());
          off += p.size();
        }
      } else {
        const size_t rows = parts[0].shape()[0];
        size_t col_off = 0;
        for (const auto& p : parts) {
          const size_t tc = p.shape()[1];
          if (p.node() >= 0) {
            std::vector<double> gp(p.size());
            for (size_t r = 0; r < rows; ++r)
              std::copy(g.begin() + static_cast<long>(r * axis_total + col_off),
                        g.begin() + static_cast<long>(r * axis_total + col_off + tc),
                        gp.begin() + static_cast<long>(r * tc));
            t.accumulate(p.node(), gp.data(), gp.size());
          }
          col_off += tc;
        }
      }
    };
  }
  return make_result(tape, std::move(out_shape), std::move(out), std::move(fn), "concat");
}

Tensor reshape(const Tensor& x, Shape shape) {
  check_shape_valid(shape);
  require(shape_numel(shape) == x.size(), "reshape: size mismatch " + shape_str(x.shape()) +
                                              " -> " + shape_str(shape));
  Tape* tape = resolve_tape(x);
  Tape::BackwardFn fn;
  if (tape && x.on_tape()) {
    fn = [x](const std::vector<double>& g, Tape& t) {
      t.accumulate(x.node(), g.data(), g.size());
    };
  }
  return make_result(tape, std::move(shape), x.data(), std::move(fn), "reshape");
}

Tensor select_row(const Tensor& m, size_t row) {
  require(m.rank() == 2, "select_row: rank-2 tensor required");
  require(row < m.shape()[0], "select_row: row " + std::to_string(row) + " out of range");
  const size_t n = m.shape()[1];
  std::vector<double> out(m.data().begin() + static_cast<long>(row * n),
                          m.data().begin() + static_cast<long>((row + 1) * n));
  Tape* tape = resolve_tape(m);
  Tape::BackwardFn fn;
  if (tape && m.on_tape()) {
    fn = [m, row, n](const std::vector<double>& g, Tape& t) {
      for (size_t j = 0; j < n; ++j) t.accumulate_at(m.node(), row * n + j, g[j]);
    };
  }
  return make_result(tape, {n}, std::move(out), std::move(fn), "select_row");
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  require(!rows.empty(), "stack_rows: empty input list");
  const size_t n = rows[0].size();
  for (const auto& r : rows) {
    require(r.rank() == 1, "stack_rows: all inputs must be vectors");
    require(r.size() == n, "stack_rows: length mismatch");
  }
  std::vector<double> out;
  out.reserve(rows.size() * n);
  for (const auto& r : rows) out.insert(out.end(), r.data().begin(), r.data().end());
  Tape* tape = nullptr;
  for (const auto& r : rows)
    if (r.on_tape()) {
      if (tape && r.tape() != tape) throw std::logic_error("stack_rows: mixed tapes");
      tape = r.tape();
    }
  Tape::BackwardFn fn;
  if (tape) {
    auto parts = rows;
    fn = [parts, n](const std::vector<double>& g, Tape& t) {
      for (size_t i = 0; i < parts.size(); ++i)
        t.accumulate(parts[i].node(), g.data() + i * n, n);
    };
  }
  return make_result(tape, {rows.size(), n}, std::move(out), std::move(fn), "stack_rows");
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  require(m.rank() == 2 && v.rank() == 1, "add_rowvec: matrix and vector required");
  require(m.shape()[1] == v.shape()[0], "add_rowvec: extent mismatch " + shape_str(m.shape()) +
                                            " vs " + shape_str(v.shape()));
  const size_t rows = m.shape()[0], cols = m.shape()[1];
  std::vector<double> out(m.data());
  for (size_t r = 0; r < rows; ++r)
    for (size_t j = 0; j < cols; ++j) out[r * cols + j] += v.data()[j];
  Tape* tape = resolve_tape(m, v);
  Tape::BackwardFn fn;
  if (tape) {
    fn = [m, v, rows, cols](const std::vector<double>& g, Tape& t) {
      if (m.node() >= 0) t.accumulate(m.node(), g.data(), g.size());
      if (v.node() >= 0) {
        std::vector<double> gv(cols, 0.0);
        for (size_t r = 0; r < rows; ++r)
          for (size_t j = 0; j < cols; ++j) gv[j] += g[r * cols + j];
        t.accumulate(v.node(), gv.data(), gv.size());
      }
    };
  }
  return make_result(tape, m.shape(), std::move(out), std::move(fn), "add_rowvec");
}

Tensor embed_rows(const Tensor& table, const std::vector<int32_t>& ids) {
  require(table.rank() == 2, "embed_rows: table must be rank 2");
  require(!ids.empty(), "embed_rows: empty id list");
  const size_t V = table.shape()[0], d = table.shape()[1];
  for (int32_t id : ids)
    require(id >= 0 && static_cast<size_t>(id) < V,
            "embed_rows: id " + std::to_string(id) + " out of range for vocab " + std::to_string(V));
  std::vector<double> out(ids.size() * d);
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy(table.data().begin() + static_cast<long>(ids[i] * static_cast<int32_t>(d)),
              table.data().begin() + static_cast<long>((ids[i] + 1) * static_cast<int32_t>(d)),
              out.begin() + static_cast<long>(i * d));
  Tape* tape = resolve_tape(table);
  Tape::BackwardFn fn;
  if (tape && table.on_tape()) {
    fn = [table, ids, d](const std::vector<double>& g, Tape& t) {
      for (size_t i = 0; i < ids.size(); ++i)
        for (size_t j = 0; j < d; ++j)
          t.accumulate_at(table.node(), static_cast<size_t>(ids[i]) * d + j, g[i * d + j]);
    };
  }
  return make_result(tape, {ids.size(), d}, std::move(out), std::move(fn), "embed_rows");
}

Tensor affine_vec(const Tensor& x, const Tensor& w, const Tensor& r, const Tensor& u,
                  const Tensor& b) {
  require(x.rank() == 1 && r.rank() == 1 && b.rank() == 1 && w.rank() == 2 && u.rank() == 2,
          "affine_vec: x[n], W[n,h], r[m], U[m,h], b[h] required");
  const size_t n = x.size(), m = r.size(), h = b.size();
  require(w.shape()[0] == n && w.shape()[1] == h, "affine_vec: W shape " + shape_str(w.shape()) +
                                                      " does not match x/b");
  require(u.shape()[0] == m && u.shape()[1] == h, "affine_vec: U shape " + shape_str(u.shape()) +
                                                      " does not match r/b");
  std::vector<double> out(b.data());
  const auto& X = x.data();
  const auto& W = w.data();
  const auto& R = r.data();
  const auto& U = u.data();
  for (size_t i = 0; i < n; ++i) {
    const double xi = X[i];
    const double* wrow = W.data() + i * h;
    for (size_t j = 0; j < h; ++j) out[j] += xi * wrow[j];
  }
  for (size_t i = 0; i < m; ++i) {
    const double ri = R[i];
    const double* urow = U.data() + i * h;
    for (size_t j = 0; j < h; ++j) out[j] += ri * urow[j];
  }
  Tape* tape = resolve_tape(x, w);
  if (!tape) tape = resolve_tape(r, u);
  if (!tape) tape = resolve_tape(b);
  Tape::BackwardFn fn;
  if (tape) {
    fn = [x, w, r, u, b, n, m, h](const std::vector<double>& g, Tape& t) {
      if (b.node() >= 0) t.accumulate(b.node(), g.data(), h);
      if (x.node() >= 0) {
        std::vector<double> gx(n, 0.0);
        const auto& W = w.data();
        for (size_t i = 0; i < n; ++i) {
          const double* wrow = W.data() + i * h;
          double s = 0.0;
          for (size_t j = 0; j < h; ++j) s += g[j] * wrow[j];
          gx[i] = s;
        }
        t.accumulate(x.node(), gx.data(), n);
      }
      if (w.node() >= 0) {
        std::vector<double> gw(n * h);
        const auto& X = x.data();
        for (size_t i = 0; i < n; ++i)
          for (size_t j = 0; j < h; ++j) gw[i * h + j] = X[i] * g[j];
        t.accumulate(w.node(), gw.data(), gw.size());
      }
      if (r.node() >= 0) {
        std::vector<double> gr(m, 0.0);
        const auto& U = u.data();
        for (size_t i = 0; i < m; ++i) {
          const double* urow = U.data() + i * h;
          double s = 0.0;
          for (size_t j = 0; j < h; ++j) s += g[j] * urow[j];
          gr[i] = s;
        }
        t.accumulate(r.node(), gr.data(), m);
      }
      if (u.node() >= 0) {
        std::vector<double> gu(m * h);
        const auto& R = r.data();
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < h; ++j) gu[i * h + j] = R[i] * g[j];
        t.accumulate(u.node(), gu.data(), gu.size());
      }
    };
  }
  return make_result(tape, {h}, std::move(out), std::move(fn), "affine_vec");
}

Tensor dot(const Tensor& u, const Tensor& v) {
  require(u.rank() == 1 && v.rank() == 1, "dot: vectors required");
  require(u.size() == v.size(), "dot: length mismatch " + shape_str(u.shape()) + " vs " +
                                    shape_str(v.shape()));
  return sum_all(mul(u, v));
}

}  // namespace fewshot::ad
