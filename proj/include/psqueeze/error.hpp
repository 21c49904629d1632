#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace psqueeze {

// Base class for failures caused by bad input (malformed files, violated
// preconditions on user-supplied values). The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// CSV / JSON ingestion failure. `row` is 1-based over data rows, 0 when the
// problem is in the header or the file as a whole.
class ParseError : public Error {
 public:
  ParseError(std::size_t row, const std::string& what)
      : Error(row == 0 ? what : "row " + std::to_string(row) + ": " + what), row_(row) {}

  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

// Arithmetic on values where the result is undefined (v = f = 0, zero
// denominator, d = -1 in the expected abnormal value).
class DomainError : public Error {
 public:
  using Error::Error;
};

}  // namespace psqueeze
