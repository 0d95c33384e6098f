#pragma once

#include <cmath>
#include <vector>

#include "sbr/tensor.hpp"

namespace sbr {

// Bias-corrected Adam. One state owns the moments for one parameter list;
// step_count increments by exactly 1 per update.
template <class S>
struct AdamState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step_count = 0;
  std::vector<Array<S>> first_moment;
  std::vector<Array<S>> second_moment;

  void reset(const std::vector<Tensor<S>>& params) {
    step_count = 0;
    first_moment.clear();
    second_moment.clear();
    for (const auto& p : params) {
      first_moment.push_back(Array<S>::Zero(p.size()));
      second_moment.push_back(Array<S>::Zero(p.size()));
    }
  }
};

template <class S>
void adam_step(std::vector<Tensor<S>>& params, AdamState<S>& state) {
  if (state.first_moment.size() != params.size()) state.reset(params);
  for (std::size_t i = 0; i < params.size(); ++i)
    if (state.first_moment[i].size() != params[i].size())
      throw DimensionError("adam_step: moment/parameter shape mismatch");

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  const S b1 = static_cast<S>(state.beta1), b2 = static_cast<S>(state.beta2);
  const S lr = static_cast<S>(state.learning_rate);
  const S eps = static_cast<S>(state.epsilon);

  for (std::size_t i = 0; i < params.size(); ++i) {
    const Array<S>& g = params[i].grad();
    Array<S>& m = state.first_moment[i];
    Array<S>& v = state.second_moment[i];
    m = b1 * m + (S(1) - b1) * g;
    v = b2 * v + (S(1) - b2) * g.square();
    Array<S> m_hat = m / static_cast<S>(bc1);
    Array<S> v_hat = v / static_cast<S>(bc2);
    params[i].update_values(params[i].values() - lr * m_hat / (v_hat.sqrt() + eps));
  }
}

}  // namespace sbr
