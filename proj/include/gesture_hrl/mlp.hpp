#pragma once

// Fully connected network: rectifier between hidden layers, linear output.
// Batches are column-major (one sample per column).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "rng.hpp"

namespace ghrl {

class Mlp {
public:
  Mlp() = default;

  // sizes = {input, hidden..., output}. Weights ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
  Mlp(std::vector<std::size_t> sizes, Rng& rng) : sizes_(std::move(sizes)) {
    if (sizes_.size() < 2) throw std::invalid_argument("Mlp: need at least input and output sizes");
    for (std::size_t s : sizes_)
      if (s == 0) throw std::invalid_argument("Mlp: zero-width layer");
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const auto in = static_cast<Eigen::Index>(sizes_[l]);
      const auto out = static_cast<Eigen::Index>(sizes_[l + 1]);
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      Eigen::MatrixXd w(out, in);
      // Column-major fill order is part of the reproducibility contract.
      for (Eigen::Index j = 0; j < in; ++j)
        for (Eigen::Index i = 0; i < out; ++i) w(i, j) = rng.uniform(-bound, bound);
      weights_.push_back(std::move(w));
      biases_.push_back(Eigen::VectorXd::Zero(out));
    }
  }

  const std::vector<std::size_t>& sizes() const { return sizes_; }
  std::size_t input_size() const { return sizes_.front(); }
  std::size_t output_size() const { return sizes_.back(); }
  std::size_t layer_count() const { return weights_.size(); }

  Eigen::MatrixXd& weight(std::size_t l) { return weights_[l]; }
  const Eigen::MatrixXd& weight(std::size_t l) const { return weights_[l]; }
  Eigen::VectorXd& bias(std::size_t l) { return biases_[l]; }
  const Eigen::VectorXd& bias(std::size_t l) const { return biases_[l]; }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      Eigen::MatrixXd z = weights_[l] * h;
      z.colwise() += biases_[l];
      if (l + 1 < weights_.size()) z = z.cwiseMax(0.0);
      h = std::move(z);
    }
    return h;
  }

  struct Gradients {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
  };

  // Forward pass keeping activations, then backpropagates d(loss)/d(output).
  // Returns the output and fills grads.
  Eigen::MatrixXd forward_backward(const Eigen::MatrixXd& x,
                                   const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& output_grad,
                                   Gradients& grads) const {
    const std::size_t L = weights_.size();
    std::vector<Eigen::MatrixXd> acts;  // acts[l] = input to layer l
    acts.reserve(L + 1);
    acts.push_back(x);
    for (std::size_t l = 0; l < L; ++l) {
      Eigen::MatrixXd z = weights_[l] * acts.back();
      z.colwise() += biases_[l];
      if (l + 1 < L) z = z.cwiseMax(0.0);
      acts.push_back(std::move(z));
    }
    Eigen::MatrixXd delta = output_grad(acts.back());
    grads.weights.resize(L);
    grads.biases.resize(L);
    for (std::size_t l = L; l-- > 0;) {
      grads.weights[l] = delta * acts[l].transpose();
      grads.biases[l] = delta.rowwise().sum();
      if (l > 0) {
        Eigen::MatrixXd back = weights_[l].transpose() * delta;
        // acts[l] is post-rectifier, so acts[l] > 0 marks the active units.
        delta = back.cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
      }
    }
    return acts.back();
  }

  void apply_sgd(const Gradients& g, double lr) {
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      weights_[l].noalias() -= lr * g.weights[l];
      biases_[l].noalias() -= lr * g.biases[l];
    }
  }

  // Flat parameter view: per layer, weights column-major then biases.
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l)
      n += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
    return n;
  }

  double& parameter(std::size_t i) {
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      const auto nw = static_cast<std::size_t>(weights_[l].size());
      if (i < nw) return weights_[l].data()[i];
      i -= nw;
      const auto nb = static_cast<std::size_t>(biases_[l].size());
      if (i < nb) return biases_[l].data()[i];
      i -= nb;
    }
    throw std::out_of_range("Mlp::parameter");
  }

  std::vector<double> flatten(const Gradients& g) const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (std::size_t l = 0; l < g.weights.size(); ++l) {
      out.insert(out.end(), g.weights[l].data(), g.weights[l].data() + g.weights[l].size());
      out.insert(out.end(), g.biases[l].data(), g.biases[l].data() + g.biases[l].size());
    }
    return out;
  }

  friend bool operator==(const Mlp& a, const Mlp& b) {
    if (a.sizes_ != b.sizes_) return false;
    for (std::size_t l = 0; l < a.weights_.size(); ++l)
      if (a.weights_[l] != b.weights_[l] || a.biases_[l] != b.biases_[l]) return false;
    return true;
  }

private:
  std::vector<std::size_t> sizes_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
};

// Central finite differences of output[k] w.r.t. every parameter, compared
// with backpropagation. Relative error is |a - n| / max(|a|, |n|, floor).
inline double finite_diff_gradcheck(const Mlp& net, const Eigen::VectorXd& input, std::size_t output_index,
                                    double h = 1e-5, double floor = 1e-6) {
  if (output_index >= net.output_size()) throw std::out_of_range("gradcheck: output index");
  Mlp probe = net;
  Mlp::Gradients g;
  const Eigen::MatrixXd x = input;
  probe.forward_backward(
      x,
      [&](const Eigen::MatrixXd& out) {
        Eigen::MatrixXd d = Eigen::MatrixXd::Zero(out.rows(), out.cols());
        d(static_cast<Eigen::Index>(output_index), 0) = 1.0;
        return d;
      },
      g);
  const std::vector<double> analytic = probe.flatten(g);
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    double& p = probe.parameter(i);
    const double saved = p;
    p = saved + h;
    const double up = probe.forward(x)(static_cast<Eigen::Index>(output_index), 0);
    p = saved - h;
    const double down = probe.forward(x)(static_cast<Eigen::Index>(output_index), 0);
    p = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace ghrl
