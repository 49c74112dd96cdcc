#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "cilf/dataset.hpp"
#include "cilf/rng.hpp"
#include "cilf/tensor.hpp"

namespace cilf::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& x : t.data()) x = lo + (hi - lo) * rng.uniform();
  return t;
}

/// Random values with |x| >= margin, for ops with a kink at zero.
inline Tensor random_away_from_zero(Shape shape, Rng& rng, double margin = 0.05) {
  Tensor t(std::move(shape));
  for (auto& x : t.data()) {
    const double m = margin + (1.0 - margin) * rng.uniform();
    x = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

struct GradCheckResult {
  /// ‖analytic − numeric‖ / max(‖analytic‖ + ‖numeric‖, tiny) over all parameters.
  double relative_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

/// Central finite differences on every element of `params`. `build` must bind
/// each parameter through tape.parameter(). Non-scalar outputs are reduced
/// with a fixed random weighting so every output element is exercised.
inline GradCheckResult check_gradients(const std::vector<Tensor*>& params, const std::function<Var(Tape&)>& build,
                                       std::uint64_t seed = 99, double h = 1e-5) {
  for (Tensor* p : params) {
    p->set_requires_grad(true);
    p->zero_grad();
  }
  Tensor weights;
  const auto evaluate = [&](Tape& tape) -> Var {
    Var out = build(tape);
    if (out.value().size() == 1) return ops::sum(out);
    if (weights.empty()) {
      Rng rng(seed);
      weights = random_tensor(out.value().shape(), rng);
    }
    return ops::sum(ops::mul(out, tape.constant(weights)));
  };

  {
    Tape tape;
    tape.backward(evaluate(tape));
  }
  std::vector<std::vector<double>> analytic;
  for (Tensor* p : params) analytic.emplace_back(p->grad().begin(), p->grad().end());

  GradCheckResult res;
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto data = params[i]->data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double saved = data[j];
      data[j] = saved + h;
      double plus, minus;
      {
        Tape tape;
        plus = evaluate(tape).value().item();
      }
      data[j] = saved - h;
      {
        Tape tape;
        minus = evaluate(tape).value().item();
      }
      data[j] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = analytic[i][j];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      res.max_abs_error = std::max(res.max_abs_error, std::abs(a - numeric));
      ++res.checked;
    }
  }
  res.relative_error = std::sqrt(diff2) / std::max(std::sqrt(a2) + std::sqrt(n2), 1e-12);
  return res;
}

/// -log softmax(logits)[label] evaluated directly with long double.
inline double cross_entropy_oracle(const std::vector<double>& logits, std::size_t label) {
  long double m = logits[0];
  for (double v : logits) m = std::max<long double>(m, v);
  long double s = 0.0L;
  for (double v : logits) s += std::exp(static_cast<long double>(v) - m);
  return static_cast<double>(std::log(s) + m - static_cast<long double>(logits[label]));
}

/// Random square single-channel dataset with every class present.
inline LabeledDataset random_dataset(std::size_t n, std::size_t classes, std::size_t side, Rng& rng,
                                     std::size_t channels = 1) {
  LabeledDataset ds;
  ds.channels = channels;
  ds.height = ds.width = side;
  ds.num_classes = classes;
  ds.images.resize(n * ds.image_size());
  for (auto& x : ds.images) x = rng.uniform();
  for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(i % classes);
  return ds;
}

}  // namespace cilf::testing
