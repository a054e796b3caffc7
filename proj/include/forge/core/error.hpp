#pragma once

#include <stdexcept>
#include <string>

namespace forge {

enum class ErrorKind {
  Usage,
  Config,
  Dimension,
  Data,
  Format,
  Version,
  Numeric,
  DegenerateInput,
  Generation,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define FORGE_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

FORGE_DEFINE_ERROR(UsageError, Usage)
FORGE_DEFINE_ERROR(ConfigError, Config)
FORGE_DEFINE_ERROR(DimensionError, Dimension)
FORGE_DEFINE_ERROR(DataError, Data)
FORGE_DEFINE_ERROR(FormatError, Format)
FORGE_DEFINE_ERROR(VersionError, Version)
FORGE_DEFINE_ERROR(NumericError, Numeric)
FORGE_DEFINE_ERROR(DegenerateInputError, DegenerateInput)
FORGE_DEFINE_ERROR(GenerationError, Generation)

#undef FORGE_DEFINE_ERROR

// Process exit code contract: 0 ok, 2 usage/config, 3 data/format, 4 numeric.
inline int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Usage:
    case ErrorKind::Config:
    case ErrorKind::Generation:
      return 2;
    case ErrorKind::Numeric:
      return 4;
    default:
      return 3;
  }
}

}  // namespace forge
