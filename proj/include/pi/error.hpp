#pragma once

#include <stdexcept>
#include <string>

namespace pi {

enum class ErrorKind {
    dimension,
    contract,
    input,
    config,
    io,
    format,
};

const char* to_string(ErrorKind kind) noexcept;

/// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) {
        fail(kind, message);
    }
}

}  // namespace pi
