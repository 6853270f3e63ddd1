#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace fewshot::ad {

using Shape = std::vector<size_t>;

size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

// Dense row-major tensor of doubles. A Tensor is a value handle: the data
// buffer is shared, and `node` ties it to a tape when it participates in
// differentiation (-1 for constants).
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::shared_ptr<std::vector<double>> data, Tape* tape, int node)
      : shape_(std::move(shape)), data_(std::move(data)), tape_(tape), node_(node) {}

  static Tensor constant(Shape shape, std::vector<double> data);
  static Tensor scalar(double v);
  static Tensor zeros(Shape shape);

  const Shape& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t size() const { return data_ ? data_->size() : 0; }
  const std::vector<double>& data() const { return *data_; }
  const std::shared_ptr<std::vector<double>>& data_ptr() const { return data_; }
  double value() const;  // scalar tensors only
  double at(size_t i) const { return (*data_)[i]; }
  double at(size_t r, size_t c) const { return (*data_)[r * shape_[1] + c]; }
  size_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
  size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  Tape* tape() const { return tape_; }
  int node() const { return node_; }
  bool on_tape() const { return tape_ != nullptr && node_ >= 0; }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

// A named, persistent model parameter. Lives outside any tape; each forward
// pass re-registers it as a leaf.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  bool trainable = true;

  size_t size() const { return value.size(); }
};

class ParameterStore {
 public:
  Parameter& create(const std::string& name, Shape shape, std::vector<double> init,
                    bool trainable = true);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  // insertion order, so iteration and serialization are deterministic
  const std::vector<std::string>& names() const { return order_; }
  std::vector<Parameter*> all();

 private:
  std::unordered_map<std::string, std::unique_ptr<Parameter>> params_;
  std::vector<std::string> order_;
};

// Gradients produced by Tape::backward, keyed by parameter name.
class Gradients {
 public:
  const std::vector<double>& of(const std::string& name) const;
  bool has(const std::string& name) const { return by_name_.count(name) > 0; }
  std::unordered_map<std::string, std::vector<double>>& map() { return by_name_; }
  const std::unordered_map<std::string, std::vector<double>>& map() const { return by_name_; }

 private:
  friend class Tape;
  std::unordered_map<std::string, std::vector<double>> by_name_;
};

// Reverse-mode tape. Nodes are appended in forward execution order, which is
// already a topological order; backward walks it once in reverse. The tape is
// rebuilt per forward pass (define-by-run).
class Tape {
 public:
  Tensor leaf(Shape shape, std::vector<double> data);
  Tensor leaf_scalar(double v) { return leaf({}, {v}); }
  // Registers a parameter as a leaf; its gradient is collected by name.
  Tensor param(const Parameter& p);

  // Core for op implementations: append a node with its backward closure.
  // The closure receives the node's output gradient and accumulates into
  // input gradient buffers via accumulate().
  using BackwardFn = std::function<void(const std::vector<double>& grad_out, Tape& tape)>;
  Tensor emit(Shape shape, std::vector<double> data, BackwardFn backward, const char* op_name);
  Tensor emit_shared(Shape shape, std::shared_ptr<std::vector<double>> data, BackwardFn backward);

  void accumulate(int node, const double* grad, size_t n);
  void accumulate_at(int node, size_t index, double g);

  // With recording off, ops compute forward values only (no nodes, no
  // backward closures). Used for value-only replays such as the numeric
  // side of grad_check.
  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }

  // root must be scalar. Returns gradients of all registered parameters
  // reachable from root (unreached trainables get zeros).
  Gradients backward(const Tensor& root);

  // Gradient buffer of an arbitrary tensor after backward (empty if unreached).
  std::vector<double> grad_of(const Tensor& t) const;

  size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    size_t numel;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::vector<std::pair<int, const Parameter*>> param_leaves_;
  bool recording_ = true;
};

// ---- ops ------------------------------------------------------------------
// All ops validate shapes, reject non-finite forward values, and record
// backward closures when an operand is on a tape.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor pow(const Tensor& a, double p);
Tensor abs(const Tensor& a);

// scalar broadcast: s is a scalar tensor multiplied into / added onto every element
Tensor scale(const Tensor& a, const Tensor& s);
Tensor clamp_min(const Tensor& a, double floor);   // gradient 0 where clamped
Tensor clamp_max(const Tensor& a, double ceil);

Tensor softmax_rows(const Tensor& x);  // rank 1 or 2; per-row max subtraction

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor sum_axis(const Tensor& x, size_t axis);
Tensor mean_axis(const Tensor& x, size_t axis);
// ties route the gradient to the lowest-index winner
Tensor max_axis(const Tensor& x, size_t axis);

Tensor concat(const std::vector<Tensor>& xs, size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor select_row(const Tensor& m, size_t row);
Tensor stack_rows(const std::vector<Tensor>& rows);
Tensor add_rowvec(const Tensor& m, const Tensor& v);  // broadcast v over rows of m

// gather rows of `table` by id; backward scatters into the table gradient
Tensor embed_rows(const Tensor& table, const std::vector<int32_t>& ids);

// fused x*W + r*U + b for vectors (one node instead of a matmul chain;
// the recurrent-cell hot path)
Tensor affine_vec(const Tensor& x, const Tensor& w, const Tensor& r, const Tensor& u,
                  const Tensor& b);

Tensor dot(const Tensor& u, const Tensor& v);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace fewshot::ad
