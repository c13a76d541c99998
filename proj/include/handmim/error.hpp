#pragma once

#include <stdexcept>
#include <string>

namespace handmim {

// Error taxonomy used across the library. Every category maps to a stable
// machine-parsable tag so the CLI can emit "error category=config ..." lines
// that scripts can grep without parsing free text.
enum class ErrorCategory {
  config,     // bad or contradictory configuration keys
  usage,      // CLI misuse (missing subcommand, missing required flag)
  io,         // unreadable/corrupt files, malformed containers
  data,       // dataset-level inconsistencies (count mismatches, bad labels)
  numeric,    // NaN/Inf encountered, divergence, degenerate linear algebra
  invariant,  // a library precondition was violated by the caller
};

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config:    return "config";
    case ErrorCategory::usage:     return "usage";
    case ErrorCategory::io:        return "io";
    case ErrorCategory::data:      return "data";
    case ErrorCategory::numeric:   return "numeric";
    case ErrorCategory::invariant: return "invariant";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory cat, const std::string& msg)
      : std::runtime_error(msg), cat_(cat) {}
  ErrorCategory category() const { return cat_; }

 private:
  ErrorCategory cat_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(ErrorCategory::config, m) {}
};
struct UsageError : Error {
  explicit UsageError(const std::string& m) : Error(ErrorCategory::usage, m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error(ErrorCategory::io, m) {}
};
struct DataError : Error {
  explicit DataError(const std::string& m) : Error(ErrorCategory::data, m) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error(ErrorCategory::numeric, m) {}
};
struct InvariantError : Error {
  explicit InvariantError(const std::string& m) : Error(ErrorCategory::invariant, m) {}
};

#define HM_CHECK(cond, ExcType, msg)            \
  do {                                          \
    if (!(cond)) throw ExcType(msg);            \
  } while (0)

}  // namespace handmim
