#pragma once

#include <stdexcept>
#include <string>

namespace ssvh {

// Broad failure classes; the CLI maps them onto process exit codes.
enum class ErrorKind {
  kUsage,    // bad arguments or configuration
  kShape,    // dimension mismatch between operands
  kData,     // malformed, truncated or inconsistent input
  kNumeric,  // non-finite value during computation
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage:
      return 1;
    case ErrorKind::kShape:
    case ErrorKind::kData:
      return 2;
    case ErrorKind::kNumeric:
      return 3;
  }
  return 2;
}

}  // namespace ssvh
