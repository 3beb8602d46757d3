#pragma once

#include <stdexcept>
#include <string>

namespace s2c {

// Error categories. The C API maps these onto its status codes and the CLI
// onto process exit codes.
enum class ErrorKind {
  usage,      // bad argument or violated precondition
  io,         // filesystem failure
  format,     // malformed or invariant-violating file contents
  numeric,    // NaN/Inf, failed gradient check
  internal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::usage, what);
}

}  // namespace s2c
