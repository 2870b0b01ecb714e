#pragma once

#include <stdexcept>
#include <string>

namespace off {

enum class ErrKind {
  invalid_shape,
  invalid_argument,
  invalid_label,
  config,
  format,
  out_of_bounds,
  internal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrKind kind() const { return kind_; }

 private:
  ErrKind kind_;
};

[[noreturn]] inline void fail(ErrKind kind, const std::string& msg) { throw Error(kind, msg); }

inline void require(bool ok, ErrKind kind, const std::string& msg) {
  if (!ok) fail(kind, msg);
}

}  // namespace off
