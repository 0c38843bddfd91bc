#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace areal {

// Precondition or input-contract violation (bad indices, asymmetric weights,
// negative counts, ...).
class ValidationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// A computation that could not produce a meaningful result: zero variance,
// Newton failure, divergent sampler.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed input file. Carries the location so the CLI can report it.
class SchemaError : public std::runtime_error {
public:
  SchemaError(std::string file, std::size_t line, std::size_t column,
              const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ":" +
                           std::to_string(column) + ": " + what),
        file_(std::move(file)), line_(line), column_(column) {}

  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

private:
  std::string file_;
  std::size_t line_;
  std::size_t column_;
};

}  // namespace areal
