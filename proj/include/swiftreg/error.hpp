#ifndef SWIFTREG_ERROR_HPP
#define SWIFTREG_ERROR_HPP

#include <stdexcept>
#include <string>
#include <vector>

namespace swiftreg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad or inconsistent configuration (config files, CLI arguments, specs).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Alignment could not be completed; carries the offending section ids.
class AlignmentFailure : public Error {
 public:
  AlignmentFailure(const std::string& what, std::vector<int> section_ids)
      : Error(what), section_ids_(std::move(section_ids)) {}

  const std::vector<int>& section_ids() const noexcept { return section_ids_; }

 private:
  std::vector<int> section_ids_;
};

}  // namespace swiftreg

#endif  // SWIFTREG_ERROR_HPP
