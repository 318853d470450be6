#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ppodiff {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct DomainError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct IOError : Error {
  using Error::Error;
};

struct InsufficientData : Error {
  using Error::Error;
};

struct MonitorError : Error {
  using Error::Error;
};

struct SamplerDiverged : Error {
  using Error::Error;
};

// Raised when the online loop hits a non-finite monitor and must abort.
struct Diverged : Error {
  using Error::Error;
};

struct NonFiniteValue : Error {
  NonFiniteValue(std::string op, std::size_t node)
      : Error("non-finite value produced by '" + op + "' at node " + std::to_string(node)),
        op_name(std::move(op)),
        node_id(node) {}

  std::string op_name;
  std::size_t node_id;
};

}  // namespace ppodiff
