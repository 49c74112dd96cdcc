#include "cilf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include <Eigen/Core>

#include "cilf/errors.hpp"

namespace cilf {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
  }
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
  }
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_string(shape_) + " does not match " + std::to_string(data_.size()) +
                         " elements");
  }
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw DimensionError("matrix needs at least one row");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw DimensionError("ragged matrix rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(data));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape_));
  return shape_[axis];
}

double& Tensor::at(std::size_t row, std::size_t col) { return data_[row * shape_[1] + col]; }
double Tensor::at(std::size_t row, std::size_t col) const { return data_[row * shape_[1] + col]; }

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t width = data_.size() / shape_[0];
  return std::span<double>(data_).subspan(r * width, width);
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t width = data_.size() / shape_[0];
  return std::span<const double>(data_).subspan(r * width, width);
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (on) {
    grad_.assign(data_.size(), 0.0);
  } else {
    grad_.clear();
    grad_.shrink_to_fit();
  }
}

std::span<double> Tensor::grad() {
  if (!requires_grad_) throw PreconditionError("tensor does not require grad");
  return grad_;
}

std::span<const double> Tensor::grad() const {
  if (!requires_grad_) throw PreconditionError("tensor does not require grad");
  return grad_;
}

void Tensor::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

// ---------------------------------------------------------------------------

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

void Tape::check(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) throw PreconditionError("variable does not belong to this tape");
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(Tensor& param) {
  if (!param.requires_grad()) throw PreconditionError("parameter tensor must have requires_grad set");
  Node n;
  n.value = param;
  n.value.set_requires_grad(false);
  n.param = &param;
  n.needs_grad = true;
  return push(std::move(n));
}

Var Tape::record(Tensor value, std::vector<Var> parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.parents.reserve(parents.size());
  for (const auto& p : parents) {
    check(p);
    n.parents.push_back(p.id);
    n.needs_grad = n.needs_grad || nodes_[p.id].needs_grad;
  }
  if (n.needs_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

const Tensor& Tape::value(Var v) const {
  check(v);
  return nodes_[v.id].value;
}

bool Tape::needs_grad(Var v) const {
  check(v);
  return nodes_[v.id].needs_grad;
}

std::span<const double> Tape::grad(Var v) const {
  check(v);
  return nodes_[v.id].grad;
}

void Tape::backward(Var root) {
  check(root);
  if (consumed_) throw PreconditionError("backward() already ran on this tape");
  if (nodes_[root.id].value.size() != 1) {
    throw DimensionError("backward root must be a scalar, got " + shape_string(nodes_[root.id].value.shape()));
  }
  consumed_ = true;
  visits_ = 0;
  if (!nodes_[root.id].needs_grad) return;

  for (std::size_t i = 0; i <= root.id; ++i) {
    if (nodes_[i].needs_grad) nodes_[i].grad.assign(nodes_[i].value.size(), 0.0);
  }
  nodes_[root.id].grad[0] = 1.0;

  std::vector<double*> sinks;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.needs_grad) continue;
    ++visits_;
    if (node.param != nullptr) {
      auto dst = node.param->grad();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += node.grad[j];
      continue;
    }
    if (!node.backward) continue;
    sinks.clear();
    for (auto p : node.parents) {
      sinks.push_back(nodes_[p].needs_grad ? nodes_[p].grad.data() : nullptr);
    }
    node.backward(node.grad, sinks);
  }
}

// ---------------------------------------------------------------------------

namespace math {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

}  // namespace

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate) {
  ConstMap A(a.data(), Eigen::Index(m), Eigen::Index(k));
  ConstMap B(b.data(), Eigen::Index(k), Eigen::Index(n));
  MutMap C(c.data(), Eigen::Index(m), Eigen::Index(n));
  if (accumulate) {
    C.noalias() += A * B;
  } else {
    C.noalias() = A * B;
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  ConstMap A(a.data(), Eigen::Index(k), Eigen::Index(m));
  ConstMap B(b.data(), Eigen::Index(k), Eigen::Index(n));
  MutMap C(c.data(), Eigen::Index(m), Eigen::Index(n));
  if (accumulate) {
    C.noalias() += A.transpose() * B;
  } else {
    C.noalias() = A.transpose() * B;
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  ConstMap A(a.data(), Eigen::Index(m), Eigen::Index(k));
  ConstMap B(b.data(), Eigen::Index(n), Eigen::Index(k));
  MutMap C(c.data(), Eigen::Index(m), Eigen::Index(n));
  if (accumulate) {
    C.noalias() += A * B.transpose();
  } else {
    C.noalias() = A * B.transpose();
  }
}

std::vector<double> log_sum_exp_rows(std::span<const double> logits, std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = logits.data() + r * cols;
    const std::size_t top = static_cast<std::size_t>(std::max_element(row, row + cols) - row);
    const double mx = row[top];
    double rest = 0.0;
    for (std::size_t c = 0; c < cols; ++c)
      if (c != top) rest += std::exp(row[c] - mx);
    out[r] = mx + std::log1p(rest);
  }
  return out;
}

std::vector<double> softmax_rows(std::span<const double> logits, std::size_t rows, std::size_t cols) {
  std::vector<double> out(logits.begin(), logits.end());
  const auto lse = log_sum_exp_rows(logits, rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = std::exp(out[r * cols + c] - lse[r]);
  }
  return out;
}

}  // namespace math
}  // namespace cilf
