#pragma once

#include <stdexcept>
#include <string>

namespace manyopt {

/// Base for every error the library raises.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Input file or record failed validation.
class ValidationError : public Error {
public:
  using Error::Error;
};

/// A backend call failed after exhausting its attempts.
class BackendError : public Error {
public:
  BackendError(const std::string& what, int attempts, bool retriable)
      : Error(what), attempts_(attempts), retriable_(retriable) {}

  int attempts() const noexcept { return attempts_; }
  bool retriable() const noexcept { return retriable_; }

private:
  int attempts_;
  bool retriable_;
};

}  // namespace manyopt
