#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cral/tape.hpp"

namespace fd {

using Builder = std::function<cral::Var(std::vector<cral::Var>&)>;

inline cral::Tensor random_tensor(cral::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  cral::Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

// Largest relative error between reverse-mode gradients of a scalar builder
// and central differences over every input entry.
inline double max_gradient_error(const Builder& build, std::vector<cral::Tensor> inputs, double h = 1e-6) {
  std::vector<cral::Tensor> analytic;
  {
    cral::Tape tape;
    std::vector<cral::Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.variable(t));
    auto loss = build(vars);
    auto g = tape.backward(loss);
    for (auto v : vars) analytic.push_back(g[v]);
  }
  auto eval = [&] {
    cral::Tape tape;
    std::vector<cral::Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.constant(t));
    return build(vars).value().item();
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      const double saved = inputs[i][k];
      inputs[i][k] = saved + h;
      const double up = eval();
      inputs[i][k] = saved - h;
      const double down = eval();
      inputs[i][k] = saved;
      worst = std::max(worst, rel_err(analytic[i][k], (up - down) / (2 * h)));
    }
  }
  return worst;
}

}  // namespace fd
