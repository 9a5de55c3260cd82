// Copyright 2026 The SaviorRec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "savior/tensor.hpp"

namespace savior_test {

// Central finite differences against the gradients reported by backward().
// `build` must rebuild the forward graph from the current values of `leaves`
// and return the scalar loss. Returns the worst relative error across all
// leaf entries, with an absolute floor so near-zero pairs compare cleanly.
inline double fd_max_rel_err(std::vector<savior::Tensor> leaves,
                             const std::function<savior::Tensor()>& build, double h = 1e-5,
                             double abs_floor = 1e-6) {
  for (auto& l : leaves) l.zero_grad();
  savior::Tensor loss = build();
  savior::backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& l : leaves) analytic.push_back(l.grad());

  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& vals = leaves[li].mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double keep = vals[i];
      double lp, lm;
      {
        savior::NoGradGuard ng;
        vals[i] = keep + h;
        lp = build().scalar_value();
        vals[i] = keep - h;
        lm = build().scalar_value();
      }
      vals[i] = keep;
      const double fd = (lp - lm) / (2.0 * h);
      const double a = analytic[li][i];
      const double denom = std::max({std::abs(a), std::abs(fd), abs_floor});
      worst = std::max(worst, std::abs(a - fd) / denom);
    }
  }
  return worst;
}

inline bool nearly_equal(double a, double b, double tol) { return std::abs(a - b) <= tol; }

}  // namespace savior_test
