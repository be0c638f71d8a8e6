// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace invenc {

// Bad argument or violated precondition. The CLI maps these to exit code 1
// when they originate from configuration, and to 2 otherwise.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Failure while doing the work (I/O, diverged training, corrupt checkpoint).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace invenc
