#pragma once

#include <stdexcept>
#include <string>

namespace cstyolo {

/// Tensor shapes that do not fit an operation.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A documented precondition was violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid network, training or CLI configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file (XML, manifest, checkpoint, image).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Well-formed file whose content is unusable (missing fields, shape mismatch).
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cstyolo
