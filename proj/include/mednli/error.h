#pragma once

#include <stdexcept>
#include <string>

namespace mednli {

// Every error carries the name of the module that raised it; what() is
// "<module>: <message>".
class Error : public std::runtime_error {
 public:
  Error(const std::string& module, const std::string& message)
      : std::runtime_error(module + ": " + message), module_(module) {}

  const std::string& module() const { return module_; }

 private:
  std::string module_;
};

class DimensionError : public Error {
  using Error::Error;
};

class ConfigError : public Error {
  using Error::Error;
};

class DataError : public Error {
  using Error::Error;
};

class ParseError : public Error {
  using Error::Error;
};

class NumericError : public Error {
  using Error::Error;
};

class ContractError : public Error {
  using Error::Error;
};

}  // namespace mednli
