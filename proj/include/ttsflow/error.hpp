#pragma once

#include <stdexcept>
#include <string>

namespace ttsflow {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a Bradley-Terry problem has no finite maximum-likelihood solution.
class Unidentifiable : public Error {
public:
    using Error::Error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw Error(message);
}

} // namespace ttsflow
