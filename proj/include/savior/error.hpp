// Copyright 2026 The SaviorRec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace savior {

// Shape or precondition violation of an operation contract.
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid or inconsistent configuration value.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Metric requested on inputs where it has no defined value
// (e.g. AUC with a single label class).
struct UndefinedMetricError : std::runtime_error {
  explicit UndefinedMetricError(const std::string& msg) : std::runtime_error(msg) {}
};

// Batch composition that makes a loss degenerate (e.g. InfoNCE with one pair).
struct DegenerateBatchError : std::runtime_error {
  explicit DegenerateBatchError(const std::string& msg) : std::runtime_error(msg) {}
};

// Optimizer refused to commit a step (non-finite gradients).
struct OptimizerError : std::runtime_error {
  explicit OptimizerError(const std::string& msg) : std::runtime_error(msg) {}
};

// Stage orchestration failure: missing upstream artifact, hash mismatch, ...
struct PipelineError : std::runtime_error {
  explicit PipelineError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace savior
