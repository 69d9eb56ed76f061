#include "localsym/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace localsym {

void adam_step(OptimizerState& state, std::map<std::string, Tensor>& params,
               const std::map<std::string, Tensor>& grads) {
  state.step += 1;
  const AdamConfig& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    if (!g.same_shape(p)) {
      throw std::invalid_argument("adam_step: gradient shape " + shape_to_string(g.shape()) +
                                  " does not match parameter '" + name + "' " +
                                  shape_to_string(p.shape()));
    }
    auto m_it = state.moment1.find(name);
    if (m_it == state.moment1.end()) {
      m_it = state.moment1.emplace(name, Tensor::zeros(p.shape())).first;
      state.moment2.emplace(name, Tensor::zeros(p.shape()));
    }
    Tensor& m = m_it->second;
    Tensor& v = state.moment2.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

}  // namespace localsym
