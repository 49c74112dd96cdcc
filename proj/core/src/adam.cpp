#include "cilf/adam.hpp"

#include <cmath>

#include "cilf/errors.hpp"

namespace cilf {

AdamState::AdamState(std::span<Tensor* const> params, AdamOptions opts) : options(opts) {
  first_moment.reserve(params.size());
  second_moment.reserve(params.size());
  for (const Tensor* p : params) {
    first_moment.emplace_back(p->size(), 0.0);
    second_moment.emplace_back(p->size(), 0.0);
  }
}

void adam_step(std::span<Tensor* const> params, AdamState& state) {
  if (params.size() != state.first_moment.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters for a state built over " +
                         std::to_string(state.first_moment.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->size() != state.first_moment[i].size()) {
      throw DimensionError("adam_step: parameter " + std::to_string(i) + " changed shape to " +
                           shape_string(params[i]->shape()));
    }
  }

  ++state.step;
  const auto& o = state.options;
  const double t = double(state.step);
  const double correction1 = 1.0 - std::pow(o.beta1, t);
  const double correction2 = 1.0 - std::pow(o.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->data();
    auto g = params[i]->grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g[j];
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      w[j] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
  }
}

}  // namespace cilf
