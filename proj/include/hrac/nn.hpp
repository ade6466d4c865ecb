#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace hrac::nn {

enum class Activation { identity, relu, tanh };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    default: return "identity";
  }
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Per-layer parameter gradients, shaped like the network.
template <typename Scalar>
struct Gradients {
  std::vector<Matrix<Scalar>> w;
  std::vector<Vector<Scalar>> b;

  Gradients& operator+=(const Gradients& other) {
    for (std::size_t l = 0; l < w.size(); ++l) {
      w[l] += other.w[l];
      b[l] += other.b[l];
    }
    return *this;
  }
  bool all_finite() const {
    for (std::size_t l = 0; l < w.size(); ++l)
      if (!w[l].allFinite() || !b[l].allFinite()) return false;
    return true;
  }
};

/// Cached activations of one batched forward pass. Samples are columns.
template <typename Scalar>
struct Tape {
  std::vector<Matrix<Scalar>> inputs;  // input to each layer
  std::vector<Matrix<Scalar>> pre;     // pre-activation of each layer
  Matrix<Scalar> output;
  bool empty() const { return inputs.empty(); }
};

/// Fully connected network: ReLU on hidden layers, configurable output activation.
template <typename Scalar>
class Mlp {
 public:
  struct Layer {
    Matrix<Scalar> w;
    Vector<Scalar> b;
  };

  Mlp() = default;

  /// Weights and biases uniform in +-1/sqrt(fan_in).
  Mlp(std::vector<std::size_t> sizes, Activation output, std::mt19937_64& rng)
      : sizes_(std::move(sizes)), output_(output) {
    if (sizes_.size() < 2) throw std::invalid_argument("Mlp: need at least input and output sizes");
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const auto fan_in = static_cast<Eigen::Index>(sizes_[l]);
      const auto fan_out = static_cast<Eigen::Index>(sizes_[l + 1]);
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> init(-bound, bound);
      Layer layer{Matrix<Scalar>(fan_out, fan_in), Vector<Scalar>(fan_out)};
      for (Eigen::Index i = 0; i < layer.w.size(); ++i) layer.w.data()[i] = static_cast<Scalar>(init(rng));
      for (Eigen::Index i = 0; i < layer.b.size(); ++i) layer.b.data()[i] = static_cast<Scalar>(init(rng));
      layers_.push_back(std::move(layer));
    }
  }

  const std::vector<std::size_t>& sizes() const { return sizes_; }
  Activation output_activation() const { return output_; }
  std::size_t input_dim() const { return sizes_.front(); }
  std::size_t output_dim() const { return sizes_.back(); }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.w.size() + l.b.size());
    return n;
  }

  Matrix<Scalar> forward(const Matrix<Scalar>& input) const {
    check_input(input);
    Matrix<Scalar> a = input;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Matrix<Scalar> z = layers_[l].w * a;
      z.colwise() += layers_[l].b;
      a = activate(z, l + 1 == layers_.size() ? output_ : Activation::relu);
    }
    return a;
  }

  Tape<Scalar> forward_tape(const Matrix<Scalar>& input) const {
    check_input(input);
    Tape<Scalar> tape;
    Matrix<Scalar> a = input;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      tape.inputs.push_back(a);
      Matrix<Scalar> z = layers_[l].w * a;
      z.colwise() += layers_[l].b;
      a = activate(z, l + 1 == layers_.size() ? output_ : Activation::relu);
      tape.pre.push_back(std::move(z));
    }
    tape.output = std::move(a);
    return tape;
  }

  /// Reverse-mode pass for dLoss/dOutput; optionally returns dLoss/dInput.
  Gradients<Scalar> backward(const Tape<Scalar>& tape, const Matrix<Scalar>& d_output,
                             Matrix<Scalar>* d_input = nullptr) const {
    if (tape.empty()) throw std::logic_error("Mlp::backward called without a cached forward pass");
    if (d_output.rows() != tape.output.rows() || d_output.cols() != tape.output.cols())
      throw std::invalid_argument("Mlp::backward: gradient shape does not match output");
    Gradients<Scalar> grads;
    grads.w.resize(layers_.size());
    grads.b.resize(layers_.size());
    Matrix<Scalar> delta = d_output.cwiseProduct(
        activation_derivative(tape.pre.back(), tape.output, output_));
    for (std::size_t l = layers_.size(); l-- > 0;) {
      grads.w[l].noalias() = delta * tape.inputs[l].transpose();
      grads.b[l] = delta.rowwise().sum();
      if (l > 0) {
        Matrix<Scalar> back = layers_[l].w.transpose() * delta;
        delta = back.cwiseProduct((tape.pre[l - 1].array() > Scalar(0)).template cast<Scalar>().matrix());
      } else if (d_input != nullptr) {
        *d_input = layers_[0].w.transpose() * delta;
      }
    }
    return grads;
  }

  Gradients<Scalar> zero_gradients() const {
    Gradients<Scalar> g;
    for (const auto& l : layers_) {
      g.w.push_back(Matrix<Scalar>::Zero(l.w.rows(), l.w.cols()));
      g.b.push_back(Vector<Scalar>::Zero(l.b.size()));
    }
    return g;
  }

  bool all_finite() const {
    for (const auto& l : layers_)
      if (!l.w.allFinite() || !l.b.allFinite()) return false;
    return true;
  }

  /// Visits every parameter in a fixed order (layer by layer, weights then biases).
  template <typename F>
  void for_each_parameter(F&& f) {
    for (auto& l : layers_) {
      for (Eigen::Index i = 0; i < l.w.size(); ++i) f(l.w.data()[i]);
      for (Eigen::Index i = 0; i < l.b.size(); ++i) f(l.b.data()[i]);
    }
  }

  std::vector<Scalar> flat() const {
    std::vector<Scalar> out;
    out.reserve(parameter_count());
    for (const auto& l : layers_) {
      out.insert(out.end(), l.w.data(), l.w.data() + l.w.size());
      out.insert(out.end(), l.b.data(), l.b.data() + l.b.size());
    }
    return out;
  }

  void set_flat(const std::vector<Scalar>& values) {
    if (values.size() != parameter_count()) throw std::invalid_argument("Mlp::set_flat: wrong parameter count");
    std::size_t i = 0;
    for_each_parameter([&](Scalar& p) { p = values[i++]; });
  }

  /// target = tau * source + (1 - tau) * target
  void soft_update_from(const Mlp& source, Scalar tau) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      layers_[l].w = tau * source.layers_[l].w + (Scalar(1) - tau) * layers_[l].w;
      layers_[l].b = tau * source.layers_[l].b + (Scalar(1) - tau) * layers_[l].b;
    }
  }

 private:
  void check_input(const Matrix<Scalar>& input) const {
    if (static_cast<std::size_t>(input.rows()) != input_dim())
      throw std::invalid_argument("Mlp: input dimension " + std::to_string(input.rows()) + " != " +
                                  std::to_string(input_dim()));
  }

  static Matrix<Scalar> activate(const Matrix<Scalar>& z, Activation act) {
    switch (act) {
      case Activation::relu: return z.cwiseMax(Scalar(0));
      case Activation::tanh: return z.array().tanh().matrix();
      default: return z;
    }
  }

  static Matrix<Scalar> activation_derivative(const Matrix<Scalar>& z, const Matrix<Scalar>& a, Activation act) {
    switch (act) {
      case Activation::relu: return (z.array() > Scalar(0)).template cast<Scalar>().matrix();
      case Activation::tanh: return (Scalar(1) - a.array().square()).matrix();
      default: return Matrix<Scalar>::Ones(z.rows(), z.cols());
    }
  }

  std::vector<std::size_t> sizes_;
  Activation output_ = Activation::identity;
  std::vector<Layer> layers_;
};

/// Adaptive-moment optimizer state for one network.
template <typename Scalar>
class Adam {
 public:
  Adam() = default;
  Adam(const Mlp<Scalar>& net, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(net.zero_gradients()), v_(net.zero_gradients()) {}

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  long steps() const { return t_; }

  void step(Mlp<Scalar>& net, const Gradients<Scalar>& grads) {
    ++t_;
    const Scalar b1 = static_cast<Scalar>(beta1_), b2 = static_cast<Scalar>(beta2_);
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const Scalar step_size = static_cast<Scalar>(lr_ / c1);
    const Scalar inv_c2 = static_cast<Scalar>(1.0 / c2);
    const Scalar eps = static_cast<Scalar>(eps_);
    auto& layers = net.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      update(layers[l].w, m_.w[l], v_.w[l], grads.w[l], b1, b2, step_size, inv_c2, eps);
      update(layers[l].b, m_.b[l], v_.b[l], grads.b[l], b1, b2, step_size, inv_c2, eps);
    }
  }

 private:
  template <typename P, typename G>
  static void update(P& param, P& m, P& v, const G& g, Scalar b1, Scalar b2, Scalar step_size, Scalar inv_c2,
                     Scalar eps) {
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    param.array() -= step_size * m.array() / ((v.array() * inv_c2).sqrt() + eps);
  }

  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  Gradients<Scalar> m_, v_;
};

// Checkpoint: {"sizes": [...], "output": "tanh", "params": [...]} with the flat() ordering.
template <typename Scalar>
nlohmann::json to_json(const Mlp<Scalar>& net) {
  std::vector<double> params;
  for (Scalar p : net.flat()) params.push_back(static_cast<double>(p));
  return {{"format", "hrac-mlp-v1"}, {"sizes", net.sizes()}, {"output", to_string(net.output_activation())},
          {"params", params}};
}

template <typename Scalar>
Mlp<Scalar> mlp_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "hrac-mlp-v1") throw std::invalid_argument("checkpoint: unknown network format");
  std::mt19937_64 rng(0);
  Mlp<Scalar> net(j.at("sizes").get<std::vector<std::size_t>>(), parse_activation(j.at("output").get<std::string>()),
                  rng);
  std::vector<Scalar> params;
  for (double p : j.at("params").get<std::vector<double>>()) params.push_back(static_cast<Scalar>(p));
  net.set_flat(params);
  return net;
}

}  // namespace hrac::nn
