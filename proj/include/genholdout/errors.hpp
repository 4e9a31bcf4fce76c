#pragma once

#include <stdexcept>
#include <string>

namespace genholdout {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A size argument is out of range (bad split size, oversized batch, ...).
class SizeError : public Error {
public:
  using Error::Error;
};

/// An interval was given with lo > hi.
class RangeError : public Error {
public:
  using Error::Error;
};

/// An operation that needs data received an empty dataset.
class EmptyDataError : public Error {
public:
  using Error::Error;
};

/// A direction vector is not unit-norm (within tolerance).
class NormError : public Error {
public:
  using Error::Error;
};

/// A numeric argument lies outside the operation's domain.
class DomainError : public Error {
public:
  using Error::Error;
};

/// An experiment description is inconsistent or unsupported.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Not enough samples to carry out a fit.
class InsufficientDataError : public Error {
public:
  using Error::Error;
};

/// A fresh-split pool has no unused chunk of the requested size left.
class PoolExhaustedError : public Error {
public:
  using Error::Error;
};

/// A Thresholdout baseline has spent its overfit budget.
class OverfitBudgetExhaustedError : public Error {
public:
  using Error::Error;
};

/// The submitted test cannot certify a false-positive bound at or below the
/// oracle's per-test level for the holdout at hand. Does not consume budget.
class TestTooWeakError : public Error {
public:
  using Error::Error;
};

/// Why a budgeted oracle stopped answering.
enum class LockReason {
  KReached,         ///< the mode's stop count (confirmations or rejections) was hit
  BudgetExhausted,  ///< all query budget consumed
};

inline const char* to_string(LockReason r) {
  return r == LockReason::KReached ? "k_reached" : "budget_exhausted";
}

/// A validation call arrived after the oracle locked.
class LockedError : public Error {
public:
  explicit LockedError(LockReason reason)
      : Error(std::string("holdout oracle is locked: ") + to_string(reason)), reason_(reason) {}

  LockReason reason() const { return reason_; }

private:
  LockReason reason_;
};

}  // namespace genholdout
