#include "pi/error.hpp"

namespace pi {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::dimension: return "dimension error";
        case ErrorKind::contract: return "contract error";
        case ErrorKind::input: return "input error";
        case ErrorKind::config: return "config error";
        case ErrorKind::io: return "io error";
        case ErrorKind::format: return "format error";
    }
    return "error";
}

void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, std::string(to_string(kind)) + ": " + message);
}

}  // namespace pi
