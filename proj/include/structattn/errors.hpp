#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace structattn {

// Root of every error the library raises. Each subclass names one failure
// class so callers (the CLI in particular) can map it to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or violated precondition on sizes/parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// An index or offset outside the kernel it addresses.
class BoundsError : public Error {
 public:
  using Error::Error;
};

// Input for which the quantity is not defined (e.g. all-zero matrix).
class UndefinedInputError : public Error {
 public:
  using Error::Error;
};

// Rank-deficient matrix handed to an inverse.
class SingularityError : public Error {
 public:
  SingularityError(const std::string& what, long rank, long required)
      : Error(what), rank_(rank), required_(required) {}
  long rank() const noexcept { return rank_; }
  long required() const noexcept { return required_; }

 private:
  long rank_;
  long required_;
};

// A request that cannot be met with the given inputs (too few filters, ...).
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

// Input does not satisfy a structural contract (not row-stochastic, not impulse).
class ContractError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Container framing is wrong: magic, version, header JSON, tensor table.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Container framing is fine but the payload is short or overlaps.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

// Container decoded but its tensors break a model invariant.
class ValidationError : public Error {
 public:
  ValidationError(const std::string& what, std::vector<std::string> tensors)
      : Error(what), tensors_(std::move(tensors)) {}
  const std::vector<std::string>& tensors() const noexcept { return tensors_; }

 private:
  std::vector<std::string> tensors_;
};

}  // namespace structattn
