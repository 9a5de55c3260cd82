// Copyright 2026 The SaviorRec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "savior/error.hpp"
#include "savior/tensor.hpp"

namespace savior {

// Linear interpolation from start to end over `horizon` steps, flat after.
struct LrSchedule {
  double start{0.01};
  double end{0.001};
  long long horizon{1};

  double at(long long step) const {
    if (horizon <= 0) return end;
    const double f = std::min(1.0, static_cast<double>(step) / static_cast<double>(horizon));
    return start + (end - start) * f;
  }
};

// Adagrad: accumulator += g^2; p -= lr * g / (sqrt(accumulator) + eps).
// Accumulators are entrywise non-decreasing across steps.
class Adagrad {
 public:
  Adagrad(std::vector<std::pair<std::string, Tensor>> params, LrSchedule sched,
          double eps = 1e-10)
      : params_(std::move(params)), sched_(sched), eps_(eps) {
    for (auto& [name, t] : params_) accum_.emplace_back(t.numel(), 0.0);
  }

  double current_lr() const { return sched_.at(step_); }
  long long steps_taken() const { return step_; }

  // Applies one update from the gradients currently stored on the parameters.
  // Non-finite gradients abort the whole step before any parameter moves.
  void step() {
    for (auto& [name, t] : params_) {
      for (double g : t.grad())
        if (!std::isfinite(g))
          throw OptimizerError("adagrad: non-finite gradient in parameter '" + name +
                               "' at step " + std::to_string(step_));
    }
    const double lr = sched_.at(step_);
    for (std::size_t p = 0; p < params_.size(); ++p) {
      Tensor& t = params_[p].second;
      const auto& g = t.grad();
      auto& acc = accum_[p];
      auto& v = t.mutable_values();
      for (std::size_t i = 0; i < v.size(); ++i) {
        acc[i] += g[i] * g[i];
        v[i] -= lr * g[i] / (std::sqrt(acc[i]) + eps_);
      }
    }
    ++step_;
  }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
  const std::vector<double>& accumulator(std::size_t i) const { return accum_[i]; }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::vector<double>> accum_;
  LrSchedule sched_;
  double eps_;
  long long step_{0};
};

}  // namespace savior
