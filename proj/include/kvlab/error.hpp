// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace kvlab {

/// Thrown when a caller violates an operation's precondition (shape
/// mismatch, out-of-range index, invalid parameter).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) {
        throw ContractError(message);
    }
}

}  // namespace kvlab
