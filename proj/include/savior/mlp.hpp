// Copyright 2026 The SaviorRec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "savior/rng.hpp"
#include "savior/tensor.hpp"

namespace savior {

// Dense stack: LeakyReLU between layers, linear output. Weights W[in, out].
struct Mlp {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  double act_slope{0.01};

  Mlp() = default;

  // He-style init scaled by fan-in.
  Mlp(const std::vector<int>& dims, Rng rng, double act_slope_in = 0.01)
      : act_slope(act_slope_in) {
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const double s = std::sqrt(2.0 / static_cast<double>(dims[l]));
      weights.push_back(Tensor::randn({dims[l], dims[l + 1]}, rng, s));
      biases.push_back(Tensor::zeros({dims[l + 1]}, true));
    }
  }

  int input_dim() const { return weights.front().dim(0); }
  int output_dim() const { return weights.back().dim(1); }

  Tensor forward(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      h = add_bias(matmul(h, weights[l]), biases[l]);
      if (l + 1 < weights.size()) h = leaky_relu(h, act_slope);
    }
    return h;
  }

  void append_params(const std::string& prefix,
                     std::vector<std::pair<std::string, Tensor>>& out) const {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.emplace_back(prefix + ".w" + std::to_string(l), weights[l]);
      out.emplace_back(prefix + ".b" + std::to_string(l), biases[l]);
    }
  }

  // Zeroes the output layer so the stack maps everything to zero at init.
  void zero_last_layer() {
    auto& w = weights.back().mutable_values();
    std::fill(w.begin(), w.end(), 0.0);
    auto& b = biases.back().mutable_values();
    std::fill(b.begin(), b.end(), 0.0);
  }
};

}  // namespace savior
