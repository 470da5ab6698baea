#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vidq {

/// Root of the error hierarchy. Each subsystem throws a subclass so callers
/// (the CLI in particular) can map failures onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text (trace lines, manifests, plan files, query source).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column = 0)
      : Error(what), line_(line), column_(column) {}
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

class OrderingError : public Error {
 public:
  OrderingError(const std::string& what, std::size_t line) : Error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class DuplicateKeyError : public Error {
  using Error::Error;
};

class SchemaError : public Error {
  using Error::Error;
};

class MergeConflictError : public Error {
  using Error::Error;
};

class ConfigurationError : public Error {
  using Error::Error;
};

class RegistrationError : public Error {
  using Error::Error;
};

/// Planner failures: unsatisfiable dependencies, unknown components.
class PlanError : public Error {
  using Error::Error;
};

/// A loaded plan refers to a component the registry does not provide.
class LinkError : public PlanError {
  using PlanError::PlanError;
};

class ProfilingError : public Error {
  using Error::Error;
};

/// Synthetic world description rejected (e.g. trajectory leaves the frame).
class SpecError : public Error {
  using Error::Error;
};

class UnsupportedError : public Error {
  using Error::Error;
};

/// Engine invariant broken; indicates a planner or executor bug.
class InternalError : public Error {
  using Error::Error;
};

}  // namespace vidq
