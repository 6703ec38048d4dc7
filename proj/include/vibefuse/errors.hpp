#pragma once

#include <stdexcept>
#include <string>

namespace vibefuse {

// Every error raised by the library carries the name of the module that
// raised it so the CLI can surface it without guessing.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& message)
      : std::runtime_error(module + ": " + message), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

class GeometryError : public Error {
  using Error::Error;
};
class DomainError : public Error {
  using Error::Error;
};
class SolverError : public Error {
  using Error::Error;
};
class FormatError : public Error {
  using Error::Error;
};
class ConfigError : public Error {
  using Error::Error;
};
class ContractError : public Error {
  using Error::Error;
};

}  // namespace vibefuse
