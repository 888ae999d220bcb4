#pragma once

#include <stdexcept>
#include <string>

namespace h2sr {

// One exception type per failure class so callers (and the CLI) can report
// a single-line cause without string matching.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class DomainError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class GeometryError : public Error { using Error::Error; };
class LookupError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class ParseError : public Error { using Error::Error; };
class EvalError : public Error { using Error::Error; };

}  // namespace h2sr
