#pragma once

#include <stdexcept>
#include <string>

namespace dkaf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when an input violates a documented invariant (bad ontology, malformed KB, ...).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// The consistency judge needs simulator ground truth that the record does not carry.
class JudgeUnavailable : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class Divergence : public Error {
 public:
  using Error::Error;
};

}  // namespace dkaf
