#pragma once

#include <stdexcept>
#include <string>

namespace trajcast {

/// Broad failure category, used by the CLI to pick an exit code.
enum class ErrorKind { config, data, numerics, eval };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define TRAJCAST_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

TRAJCAST_DEFINE_ERROR(ConfigError, config)
TRAJCAST_DEFINE_ERROR(RangeError, config)
TRAJCAST_DEFINE_ERROR(ShapeError, config)
TRAJCAST_DEFINE_ERROR(ParseError, data)
TRAJCAST_DEFINE_ERROR(SchemaError, data)
TRAJCAST_DEFINE_ERROR(InputError, data)
TRAJCAST_DEFINE_ERROR(NoDirection, data)
TRAJCAST_DEFINE_ERROR(NumericsError, numerics)
TRAJCAST_DEFINE_ERROR(EvalError, eval)

#undef TRAJCAST_DEFINE_ERROR

}  // namespace trajcast
