#pragma once

#include <stdexcept>
#include <string>

namespace fe4dgs {

/// Invalid configuration or mismatched dimensions supplied by the caller.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an API contract, e.g. passing a cache from a different call.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// NaN/Inf or a degenerate quantity encountered during computation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or missing input data (files, frames, masks).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary file whose bytes do not match the expected layout.
class FormatError : public DataError {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : DataError(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace fe4dgs
