#ifndef OPADV_ERROR_HPP_
#define OPADV_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace opadv {

/// Bad input: malformed files, invalid configuration, contract violations by
/// the caller. The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Failure while running a valid request (I/O, numerical blow-up). Exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  explicit RuntimeFailure(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace opadv

#endif  // OPADV_ERROR_HPP_
