#include "morphscope/error.hpp"

namespace morphscope {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape error";
    case ErrorKind::format: return "format error";
    case ErrorKind::corruption: return "corruption error";
    case ErrorKind::schema: return "schema error";
    case ErrorKind::decode: return "decode error";
    case ErrorKind::unsupported_format: return "unsupported format";
    case ErrorKind::argument: return "argument error";
    case ErrorKind::training: return "training error";
    case ErrorKind::data: return "data error";
    case ErrorKind::protocol: return "protocol error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::io: return "I/O error";
  }
  return "error";
}

void raise(ErrorKind kind, const std::string& message) {
  throw Error(kind, std::string(to_string(kind)) + ": " + message);
}

}  // namespace morphscope
