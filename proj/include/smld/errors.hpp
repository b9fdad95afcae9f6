// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

#include "smld/precision.hpp"

SMLD_NAMESPACE_BEGIN

// Error taxonomy. Each class maps onto one failure family so callers (the
// CLI in particular) can translate them into stable exit codes.

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ContractError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct VocabularyError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct StateError : std::logic_error {
    using std::logic_error::logic_error;
};

struct LoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A stage was invoked before an artifact it depends on exists.
struct DependencyError : std::runtime_error {
    DependencyError(std::string artifact, const std::string& detail)
        : std::runtime_error("missing dependency '" + artifact + "': " + detail),
          artifact_(std::move(artifact)) {}
    const std::string& artifact() const noexcept { return artifact_; }

  private:
    std::string artifact_;
};

/// Non-finite loss during training. Carries the last finite loss observed.
struct TrainingError : std::runtime_error {
    TrainingError(const std::string& what, double last_good_loss)
        : std::runtime_error(what), last_good_loss_(last_good_loss) {}
    double last_good_loss() const noexcept { return last_good_loss_; }

  private:
    double last_good_loss_;
};

SMLD_NAMESPACE_END
