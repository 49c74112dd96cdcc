#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cilf {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major float64 array. A gradient buffer of identical shape exists
/// iff requires_grad() is set.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  /// 2-D tensor from nested rows; all rows must have equal length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  /// Element access for 2-D tensors.
  double& at(std::size_t row, std::size_t col);
  double at(std::size_t row, std::size_t col) const;
  /// Scalar value of a single-element tensor.
  double item() const;

  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on);
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  /// Same data with a new shape of equal element count.
  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor& other) const { return shape_ == other.shape_ && data_ == other.data_; }

 private:
  Shape shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::vector<double> grad_;
};

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// grad_out is dL/d(output); grad_in[i] is the accumulator for parent i, or
/// nullptr when that parent does not need a gradient. Implementations must
/// add into grad_in, never overwrite.
using BackwardFn = std::function<void(std::span<const double> grad_out, std::span<double* const> grad_in)>;

/// Define-by-run reverse-mode tape. Node ids are append order, which is a
/// topological order since parents always exist before their children.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives gradient.
  Var constant(Tensor value);
  /// Leaf bound to a trainable tensor; backward() adds into param.grad().
  /// The tensor must outlive the tape and have requires_grad set.
  Var parameter(Tensor& param);
  /// Records an op output. If no parent needs a gradient the node is inert.
  Var record(Tensor value, std::vector<Var> parents, BackwardFn backward);

  /// Reverse sweep from a scalar root. Can be called once per tape.
  void backward(Var root);

  const Tensor& value(Var v) const;
  bool needs_grad(Var v) const;
  /// Gradient of the last backward() root w.r.t. v (zeros if unreached).
  std::span<const double> grad(Var v) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Number of node visits performed by the last backward().
  std::size_t visits() const noexcept { return visits_; }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Tensor* param = nullptr;
    bool needs_grad = false;
    std::vector<double> grad;
  };

  Var push(Node node);
  void check(Var v) const;

  std::deque<Node> nodes_;  // stable references across push
  std::size_t visits_ = 0;
  bool consumed_ = false;
};

namespace ops {

/// [m×k]·[k×n] -> [m×n].
Var matmul(Var a, Var b);
/// 2-D transpose.
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// [B×n] + bias[n] broadcast over rows. The only broadcasting op.
Var add_bias(Var a, Var bias);
Var relu(Var a);
Var sum(Var a);
Var mean(Var a);
/// Euclidean norm of each row of a [B×d] tensor -> [B]. The gradient at a
/// zero row is taken as 0 (subgradient).
Var row_l2_norm(Var a);
/// Squared Euclidean norm of each row -> [B].
Var row_sq_norm(Var a);
Var reshape(Var a, Shape shape);
/// Selects columns of a [B×n] tensor in the given order -> [B×cols].
Var gather_columns(Var a, std::vector<std::size_t> columns);
/// Stacks [n_i×d] tensors row-wise.
Var concat_rows(std::span<const Var> parts);
/// Mean over rows of -log softmax(logits)[label], log-sum-exp stabilized.
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels);
/// Cross-correlation of [B×C×H×W] with kernel [F×C×kh×kw] -> [B×F×Ho×Wo].
Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding);
/// Non-overlapping average pooling with a square window (stride == window).
Var avg_pool2d(Var input, std::size_t window);

}  // namespace ops

/// Plain (tape-free) helpers shared by inference paths.
namespace math {

/// c = a·b for row-major matrices.
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate = false);
/// c = aᵀ·b with a [k×m], b [k×n].
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate = false);
/// c = a·bᵀ with a [m×k], b [n×k].
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate = false);

/// Row-wise log-sum-exp of a [rows×cols] matrix.
std::vector<double> log_sum_exp_rows(std::span<const double> logits, std::size_t rows, std::size_t cols);
/// Row-wise softmax.
std::vector<double> softmax_rows(std::span<const double> logits, std::size_t rows, std::size_t cols);

}  // namespace math

}  // namespace cilf
