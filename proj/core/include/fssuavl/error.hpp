#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fssuavl {

// Base of every error raised by the library. Callers that only care about
// "something went wrong" catch this; the subclasses carry the category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes do not agree with what an operation requires.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A configuration object contains invalid fields.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// FedAvg inputs disagree on tensor names or shapes.
class AggregationError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// A file on disk is malformed. Carries the path and the byte offset where
// parsing stopped.
class FormatError : public Error {
 public:
  FormatError(std::string path, std::uint64_t offset, const std::string& what)
      : Error(path + " @ byte " + std::to_string(offset) + ": " + what),
        path_(std::move(path)),
        offset_(offset) {}

  const std::string& path() const { return path_; }
  std::uint64_t offset() const { return offset_; }

 private:
  std::string path_;
  std::uint64_t offset_;
};

}  // namespace fssuavl
