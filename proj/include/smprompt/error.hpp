#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace smprompt {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input rejected before any work is done (bad config, bad arguments).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed file content. `line` is 1-based, 0 when not applicable.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// The remote service answered with something that violates the wire protocol.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Transport failure talking to a remote service. Retriable.
class NetworkError : public Error {
 public:
  NetworkError(const std::string& what, int attempts)
      : Error(what + " (after " + std::to_string(attempts) + " attempt" +
              (attempts == 1 ? "" : "s") + ")"),
        attempts_(attempts) {}
  int attempts() const { return attempts_; }

 private:
  int attempts_;
};

class UnsupportedOperation : public Error {
 public:
  using Error::Error;
};

}  // namespace smprompt
