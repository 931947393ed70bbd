#pragma once

#include <stdexcept>
#include <string>

namespace adapt {

// Dimension or shape contract violated by a caller.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration (model, generator, run).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Data does not satisfy an operation's contract (missing modality, empty set, ...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A pipeline stage was requested before the stage it depends on produced its output.
class MissingPrerequisite : public std::runtime_error {
 public:
  MissingPrerequisite(std::string stage, const std::string& what)
      : std::runtime_error(what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace adapt
