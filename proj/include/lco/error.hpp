#pragma once

#include <stdexcept>
#include <string>

namespace lco {

/// Raised when an input violates a documented precondition or invariant.
class ValidationError : public std::invalid_argument {
public:
    explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised for unreadable, truncated or malformed files.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed on-disk content (bad magic, version, truncation).
class FormatError : public IoError {
public:
    explicit FormatError(const std::string& what) : IoError(what) {}
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw ValidationError(what);
}

}  // namespace lco
