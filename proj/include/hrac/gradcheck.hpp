#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "nn.hpp"

namespace hrac::gradcheck {

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Central differences (eps 1e-5) of loss(net) against the supplied analytic gradient,
// on `samples` randomly chosen parameters (all of them when samples == 0).
inline GradCheckResult check_parameter_gradients(hrac::nn::Mlp<double>& net,
                                                 const std::function<double(const hrac::nn::Mlp<double>&)>& loss,
                                                 const hrac::nn::Gradients<double>& analytic, std::size_t samples,
                                                 std::uint64_t seed, double eps = 1e-5) {
  std::vector<double*> params;
  std::vector<double> grads;
  auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (Eigen::Index i = 0; i < layers[l].w.size(); ++i) {
      params.push_back(layers[l].w.data() + i);
      grads.push_back(analytic.w[l].data()[i]);
    }
    for (Eigen::Index i = 0; i < layers[l].b.size(); ++i) {
      params.push_back(layers[l].b.data() + i);
      grads.push_back(analytic.b[l].data()[i]);
    }
  }
  std::vector<std::size_t> order(params.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (samples > 0 && samples < order.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(samples);
  }
  GradCheckResult result;
  for (std::size_t idx : order) {
    const double saved = *params[idx];
    *params[idx] = saved + eps;
    const double up = loss(net);
    *params[idx] = saved - eps;
    const double down = loss(net);
    *params[idx] = saved;
    result.max_rel_error = std::max(result.max_rel_error, relative_error(grads[idx], (up - down) / (2 * eps)));
    ++result.checked;
  }
  return result;
}

// Same for a gradient with respect to an input matrix.
inline GradCheckResult check_input_gradient(const std::function<double(const hrac::nn::Matrix<double>&)>& loss,
                                            hrac::nn::Matrix<double> x, const hrac::nn::Matrix<double>& analytic,
                                            double eps = 1e-5) {
  GradCheckResult result;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + eps;
    const double up = loss(x);
    x.data()[i] = saved - eps;
    const double down = loss(x);
    x.data()[i] = saved;
    result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic.data()[i], (up - down) / (2 * eps)));
    ++result.checked;
  }
  return result;
}

}  // namespace hrac::gradcheck
