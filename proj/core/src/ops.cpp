#include <algorithm>
#include <cmath>

#include "cilf/errors.hpp"
#include "cilf/tensor.hpp"

namespace cilf::ops {
namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw PreconditionError("operands recorded on different tapes");
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank(A, 2, "matmul");
  require_rank(B, 2, "matmul");
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  if (B.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(A.shape()) + " x " +
                         shape_string(B.shape()));
  }
  Tensor out({m, n});
  math::gemm(A.data(), B.data(), out.data(), m, k, n);
  return a.tape->record(std::move(out), {a, b},
                        [A_data = A.values(), B_data = B.values(), m, k, n](std::span<const double> g,
                                                                             std::span<double* const> in) {
                          // dA = g·Bᵀ, dB = Aᵀ·g
                          if (in[0] != nullptr) {
                            math::gemm_nt(g, B_data, std::span<double>(in[0], m * k), m, n, k, true);
                          }
                          if (in[1] != nullptr) {
                            math::gemm_tn(A_data, g, std::span<double>(in[1], k * n), k, m, n, true);
                          }
                        });
}

Var transpose(Var a) {
  const Tensor& A = a.value();
  require_rank(A, 2, "transpose");
  const std::size_t r = A.dim(0), c = A.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = A[i * c + j];
  }
  return a.tape->record(std::move(out), {a}, [r, c](std::span<const double> g, std::span<double* const> in) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) in[0][i * c + j] += g[j * r + i];
    }
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return a.tape->record(std::move(out), {a, b}, [](std::span<const double> g, std::span<double* const> in) {
    for (double* dst : in) {
      if (dst == nullptr) continue;
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return a.tape->record(std::move(out), {a, b}, [](std::span<const double> g, std::span<double* const> in) {
    if (in[0] != nullptr) {
      for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
    }
    if (in[1] != nullptr) {
      for (std::size_t i = 0; i < g.size(); ++i) in[1][i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return a.tape->record(std::move(out), {a, b},
                        [A_data = A.values(), B_data = B.values()](std::span<const double> g,
                                                                   std::span<double* const> in) {
                          if (in[0] != nullptr) {
                            for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i] * B_data[i];
                          }
                          if (in[1] != nullptr) {
                            for (std::size_t i = 0; i < g.size(); ++i) in[1][i] += g[i] * A_data[i];
                          }
                        });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= factor;
  return a.tape->record(std::move(out), {a}, [factor](std::span<const double> g, std::span<double* const> in) {
    for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += factor * g[i];
  });
}

Var add_bias(Var a, Var bias) {
  require_same_tape(a, bias);
  const Tensor& A = a.value();
  const Tensor& b = bias.value();
  require_rank(A, 2, "add_bias");
  const std::size_t rows = A.dim(0), cols = A.dim(1);
  if (b.size() != cols) {
    throw DimensionError("add_bias: bias of " + std::to_string(b.size()) + " for " + shape_string(A.shape()));
  }
  Tensor out = A;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += b[c];
  }
  return a.tape->record(std::move(out), {a, bias},
                        [rows, cols](std::span<const double> g, std::span<double* const> in) {
                          if (in[0] != nullptr) {
                            for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
                          }
                          if (in[1] != nullptr) {
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t c = 0; c < cols; ++c) in[1][c] += g[r * cols + c];
                            }
                          }
                        });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return a.tape->record(out, {a}, [out_data = out.values()](std::span<const double> g, std::span<double* const> in) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (out_data[i] > 0.0) in[0][i] += g[i];
    }
  });
}

Var sum(Var a) {
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  return a.tape->record(Tensor::scalar(acc), {a},
                        [n = a.value().size()](std::span<const double> g, std::span<double* const> in) {
                          for (std::size_t i = 0; i < n; ++i) in[0][i] += g[0];
                        });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  return a.tape->record(Tensor::scalar(acc / double(n)), {a},
                        [n](std::span<const double> g, std::span<double* const> in) {
                          const double share = g[0] / double(n);
                          for (std::size_t i = 0; i < n; ++i) in[0][i] += share;
                        });
}

Var row_l2_norm(Var a) {
  const Tensor& A = a.value();
  require_rank(A, 2, "row_l2_norm");
  const std::size_t rows = A.dim(0), cols = A.dim(1);
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += A[r * cols + c] * A[r * cols + c];
    out[r] = std::sqrt(acc);
  }
  return a.tape->record(out, {a},
                        [A_data = A.values(), norms = out.values(), rows, cols](std::span<const double> g,
                                                                                 std::span<double* const> in) {
                          for (std::size_t r = 0; r < rows; ++r) {
                            if (norms[r] == 0.0) continue;
                            const double s = g[r] / norms[r];
                            for (std::size_t c = 0; c < cols; ++c) in[0][r * cols + c] += s * A_data[r * cols + c];
                          }
                        });
}

Var row_sq_norm(Var a) {
  const Tensor& A = a.value();
  require_rank(A, 2, "row_sq_norm");
  const std::size_t rows = A.dim(0), cols = A.dim(1);
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += A[r * cols + c] * A[r * cols + c];
    out[r] = acc;
  }
  return a.tape->record(std::move(out), {a},
                        [A_data = A.values(), rows, cols](std::span<const double> g, std::span<double* const> in) {
                          for (std::size_t r = 0; r < rows; ++r) {
                            for (std::size_t c = 0; c < cols; ++c) {
                              in[0][r * cols + c] += 2.0 * g[r] * A_data[r * cols + c];
                            }
                          }
                        });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape->record(std::move(out), {a}, [](std::span<const double> g, std::span<double* const> in) {
    for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
  });
}

Var gather_columns(Var a, std::vector<std::size_t> columns) {
  const Tensor& A = a.value();
  require_rank(A, 2, "gather_columns");
  const std::size_t rows = A.dim(0), cols = A.dim(1);
  if (columns.empty()) throw DimensionError("gather_columns: empty column list");
  for (auto c : columns) {
    if (c >= cols) throw IndexError("gather_columns: column " + std::to_string(c) + " >= " + std::to_string(cols));
  }
  const std::size_t width = columns.size();
  Tensor out({rows, width});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = A[r * cols + columns[j]];
  }
  return a.tape->record(std::move(out), {a},
                        [columns = std::move(columns), rows, cols](std::span<const double> g,
                                                                   std::span<double* const> in) {
                          const std::size_t width = columns.size();
                          for (std::size_t r = 0; r < rows; ++r) {
                            for (std::size_t j = 0; j < width; ++j) in[0][r * cols + columns[j]] += g[r * width + j];
                          }
                        });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Tape* tape = parts.front().tape;
  const std::size_t cols = parts.front().value().rank() == 2 ? parts.front().value().dim(1) : 0;
  std::size_t rows = 0;
  std::vector<Var> parents;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    require_same_tape(parts.front(), p);
    require_rank(p.value(), 2, "concat_rows");
    if (p.value().dim(1) != cols) throw DimensionError("concat_rows: column count mismatch");
    rows += p.value().dim(0);
    parents.push_back(p);
    sizes.push_back(p.value().size());
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  return tape->record(Tensor({rows, cols}, std::move(data)), std::move(parents),
                      [sizes](std::span<const double> g, std::span<double* const> in) {
                        std::size_t offset = 0;
                        for (std::size_t i = 0; i < sizes.size(); ++i) {
                          if (in[i] != nullptr) {
                            for (std::size_t j = 0; j < sizes[i]; ++j) in[i][j] += g[offset + j];
                          }
                          offset += sizes[i];
                        }
                      });
}

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels) {
  const Tensor& L = logits.value();
  require_rank(L, 2, "softmax_cross_entropy");
  const std::size_t rows = L.dim(0), cols = L.dim(1);
  if (labels.size() != rows) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " rows");
  }
  for (auto y : labels) {
    if (y >= cols) {
      throw IndexError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(cols) +
                       ")");
    }
  }
  std::vector<double> lse(rows);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = L.data().data() + r * cols;
    const std::size_t top = static_cast<std::size_t>(std::max_element(row, row + cols) - row);
    double rest = 0.0;
    for (std::size_t c = 0; c < cols; ++c)
      if (c != top) rest += std::exp(row[c] - row[top]);
    const double tail = std::log1p(rest);
    lse[r] = row[top] + tail;
    loss += (row[top] - row[labels[r]]) + tail;
  }
  loss /= double(rows);

  std::vector<std::size_t> y(labels.begin(), labels.end());
  return logits.tape->record(
      Tensor::scalar(loss), {logits},
      [L_data = L.values(), lse, y = std::move(y), rows, cols](std::span<const double> g, std::span<double* const> in) {
        const double s = g[0] / double(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            const double p = std::exp(L_data[r * cols + c] - lse[r]);
            in[0][r * cols + c] += s * (p - (c == y[r] ? 1.0 : 0.0));
          }
        }
      });
}

}  // namespace cilf::ops
