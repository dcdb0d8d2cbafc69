#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace csgemos {

/// Argument outside the domain of a function, or a non-finite input.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Malformed, inconsistent or insufficient input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical procedure could not produce a usable result.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw DomainError(std::string(what) + ": non-finite argument");
  }
}

}  // namespace detail
}  // namespace csgemos
