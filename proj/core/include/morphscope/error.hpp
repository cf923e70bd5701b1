#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace morphscope {

enum class ErrorKind {
  shape,
  format,
  corruption,
  schema,
  decode,
  unsupported_format,
  argument,
  training,
  data,
  protocol,
  numeric,
  io,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (the CLI in
// particular) can map it onto an exit status without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void raise(ErrorKind kind, const std::string& message);

}  // namespace morphscope
