#include "cilf/errors.hpp"
#include "cilf/tensor.hpp"

namespace cilf::ops {
namespace {

struct ConvGeometry {
  std::size_t batch, in_ch, height, width;
  std::size_t filters, kh, kw;
  std::size_t stride, pad;
  std::size_t out_h, out_w;
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad) {
  if (x.rank() != 4 || k.rank() != 4) {
    throw DimensionError("conv2d: expected rank-4 input and kernel, got " + shape_string(x.shape()) + " and " +
                         shape_string(k.shape()));
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), k.dim(0), k.dim(2), k.dim(3), stride, pad, 0, 0};
  if (k.dim(1) != g.in_ch) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(k.dim(1)) + " channels, input has " +
                         std::to_string(g.in_ch));
  }
  if (g.height + 2 * pad < g.kh || g.width + 2 * pad < g.kw) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  g.out_h = (g.height + 2 * pad - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * pad - g.kw) / stride + 1;
  return g;
}

}  // namespace

Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding) {
  if (input.tape != kernel.tape) throw PreconditionError("operands recorded on different tapes");
  const Tensor& X = input.value();
  const Tensor& K = kernel.value();
  const ConvGeometry g = conv_geometry(X, K, stride, padding);

  Tensor out({g.batch, g.filters, g.out_h, g.out_w});
  const auto x_at = [&](std::size_t b, std::size_t c, std::size_t i, std::size_t j) {
    return ((b * g.in_ch + c) * g.height + i) * g.width + j;
  };
  const auto k_at = [&](std::size_t f, std::size_t c, std::size_t u, std::size_t v) {
    return ((f * g.in_ch + c) * g.kh + u) * g.kw + v;
  };

  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t f = 0; f < g.filters; ++f) {
      for (std::size_t oi = 0; oi < g.out_h; ++oi) {
        for (std::size_t oj = 0; oj < g.out_w; ++oj) {
          double acc = 0.0;
          for (std::size_t c = 0; c < g.in_ch; ++c) {
            for (std::size_t u = 0; u < g.kh; ++u) {
              const std::ptrdiff_t i = std::ptrdiff_t(oi * g.stride + u) - std::ptrdiff_t(g.pad);
              if (i < 0 || i >= std::ptrdiff_t(g.height)) continue;
              for (std::size_t v = 0; v < g.kw; ++v) {
                const std::ptrdiff_t j = std::ptrdiff_t(oj * g.stride + v) - std::ptrdiff_t(g.pad);
                if (j < 0 || j >= std::ptrdiff_t(g.width)) continue;
                acc += X[x_at(b, c, std::size_t(i), std::size_t(j))] * K[k_at(f, c, u, v)];
              }
            }
          }
          out[((b * g.filters + f) * g.out_h + oi) * g.out_w + oj] = acc;
        }
      }
    }
  }

  return input.tape->record(
      std::move(out), {input, kernel},
      [X_data = X.values(), K_data = K.values(), g](std::span<const double> grad, std::span<double* const> in) {
        const auto x_at = [&](std::size_t b, std::size_t c, std::size_t i, std::size_t j) {
          return ((b * g.in_ch + c) * g.height + i) * g.width + j;
        };
        const auto k_at = [&](std::size_t f, std::size_t c, std::size_t u, std::size_t v) {
          return ((f * g.in_ch + c) * g.kh + u) * g.kw + v;
        };
        for (std::size_t b = 0; b < g.batch; ++b) {
          for (std::size_t f = 0; f < g.filters; ++f) {
            for (std::size_t oi = 0; oi < g.out_h; ++oi) {
              for (std::size_t oj = 0; oj < g.out_w; ++oj) {
                const double go = grad[((b * g.filters + f) * g.out_h + oi) * g.out_w + oj];
                if (go == 0.0) continue;
                for (std::size_t c = 0; c < g.in_ch; ++c) {
                  for (std::size_t u = 0; u < g.kh; ++u) {
                    const std::ptrdiff_t i = std::ptrdiff_t(oi * g.stride + u) - std::ptrdiff_t(g.pad);
                    if (i < 0 || i >= std::ptrdiff_t(g.height)) continue;
                    for (std::size_t v = 0; v < g.kw; ++v) {
                      const std::ptrdiff_t j = std::ptrdiff_t(oj * g.stride + v) - std::ptrdiff_t(g.pad);
                      if (j < 0 || j >= std::ptrdiff_t(g.width)) continue;
                      const std::size_t xi = x_at(b, c, std::size_t(i), std::size_t(j));
                      const std::size_t ki = k_at(f, c, u, v);
                      if (in[0] != nullptr) in[0][xi] += go * K_data[ki];
                      if (in[1] != nullptr) in[1][ki] += go * X_data[xi];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Var avg_pool2d(Var input, std::size_t window) {
  const Tensor& X = input.value();
  if (X.rank() != 4) throw DimensionError("avg_pool2d: expected rank-4 input, got " + shape_string(X.shape()));
  if (window == 0) throw DimensionError("avg_pool2d: window must be positive");
  const std::size_t B = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  if (H % window != 0 || W % window != 0) {
    throw DimensionError("avg_pool2d: spatial dims " + shape_string(X.shape()) + " not divisible by window " +
                         std::to_string(window));
  }
  const std::size_t Ho = H / window, Wo = W / window;
  const double inv = 1.0 / double(window * window);
  Tensor out({B, C, Ho, Wo});
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        out[(bc * Ho + i / window) * Wo + j / window] += inv * X[(bc * H + i) * W + j];
      }
    }
  }
  return input.tape->record(std::move(out), {input},
                            [B, C, H, W, Ho, Wo, window, inv](std::span<const double> g, std::span<double* const> in) {
                              for (std::size_t bc = 0; bc < B * C; ++bc) {
                                for (std::size_t i = 0; i < H; ++i) {
                                  for (std::size_t j = 0; j < W; ++j) {
                                    in[0][(bc * H + i) * W + j] += inv * g[(bc * Ho + i / window) * Wo + j / window];
                                  }
                                }
                              }
                            });
}

}  // namespace cilf::ops
