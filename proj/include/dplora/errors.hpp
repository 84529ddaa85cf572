#pragma once

#include <stdexcept>
#include <string>

namespace dplora {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Dimension mismatch in a matrix or layer operation.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Argument outside its documented domain (negative std, bad simplex, ...).
class ParamError : public Error {
 public:
  explicit ParamError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration (unknown key, type error, invariant violation).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// A federation-round contract was violated (mismatched uploads, bad weights).
class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& msg) : Error(msg) {}
};

// The moments accountant was asked for a bound outside its valid regime.
// Never answered silently: callers must catch or let the run abort.
class RegimeError : public Error {
 public:
  explicit RegimeError(const std::string& msg) : Error(msg) {}
};

// File / stream failure while reading or writing artifacts.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace dplora
