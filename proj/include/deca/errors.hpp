#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace deca {

// Bad arguments are reported with std::invalid_argument; the types below
// carry extra context for the failure modes callers are expected to handle.

class parse_error : public std::runtime_error {
 public:
  parse_error(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class connectivity_error : public std::runtime_error {
 public:
  explicit connectivity_error(std::size_t components)
      : std::runtime_error("communication graph is disconnected (" + std::to_string(components) +
                           " components)"),
        components_(components) {}

  std::size_t components() const noexcept { return components_; }

 private:
  std::size_t components_;
};

/// Raised when I - Laplacian would have negative eigenvalues.
class spectrum_error : public std::runtime_error {
 public:
  explicit spectrum_error(const std::string& what) : std::runtime_error(what) {}
};

class io_error : public std::runtime_error {
 public:
  explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace deca
