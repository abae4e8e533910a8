#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace qfb {

/// A parameter or configuration value failed validation. `field()` names the
/// offending field so drivers can report it in machine-readable form.
class ParameterError : public std::invalid_argument {
 public:
  ParameterError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// A numerical integration or solve failed (step too coarse, truncation
/// breach, no stabilizing Riccati solution, ...).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& message,
                          std::optional<std::int64_t> step = std::nullopt)
      : std::runtime_error(message), step_(step) {}

  std::optional<std::int64_t> step() const noexcept { return step_; }

 private:
  std::optional<std::int64_t> step_;
};

}  // namespace qfb
