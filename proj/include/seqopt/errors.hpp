#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace seqopt {

enum class ErrorKind { config, domain, numeric, input, internal, environment };

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::domain: return "domain";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::input: return "input";
    case ErrorKind::internal: return "internal";
    case ErrorKind::environment: return "environment";
  }
  return "unknown";
}

/// Base for every error raised by the library. `kind()` is the stable tag the
/// CLI prints on failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};
struct DomainError : Error {
  explicit DomainError(const std::string& what) : Error(ErrorKind::domain, what) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};
struct InputError : Error {
  explicit InputError(const std::string& what) : Error(ErrorKind::input, what) {}
};
struct InternalError : Error {
  explicit InternalError(const std::string& what) : Error(ErrorKind::internal, what) {}
};
struct EnvironmentError : Error {
  explicit EnvironmentError(const std::string& what) : Error(ErrorKind::environment, what) {}
};

}  // namespace seqopt
