// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace invgrad {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shape does not conform to the operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Extent product would overflow or is otherwise unrepresentable.
class SizeError : public Error {
 public:
  using Error::Error;
};

// Argument outside the invertible domain (e.g. |y| >= 1 for atanh).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Jacobian diagonal too small to divide through.
class SingularityError : public Error {
 public:
  using Error::Error;
};

// Ledger bookkeeping violation: double free, foreign tensor, negative balance.
class LedgerFault : public Error {
 public:
  using Error::Error;
};

// Operation-count guard tripped before starting an infeasible computation.
class BudgetError : public Error {
 public:
  using Error::Error;
};

// Invalid run configuration (rejected before any compute).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace invgrad
