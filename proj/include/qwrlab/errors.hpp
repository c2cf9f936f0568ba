#pragma once

#include <stdexcept>
#include <string>

namespace qwrlab {

// Sequencing violations: stepping a finished episode, sampling an empty
// buffer, and similar misuse of an otherwise valid object.
class ProtocolError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite losses, gradients or targets. Carries the step index at which
// training blew up.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, long step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"),
        step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

// Malformed serialized payloads (policy params, checkpoints, datasets).
class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid experiment configuration. Carries the offending field so the CLI
// can print a field-level message and exit with code 2.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error("field '" + field + "': " + message),
        field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

}  // namespace qwrlab
