#pragma once

#include <stdexcept>
#include <string>

namespace slidegraph {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (bad files, dimension mismatches,
/// infeasible requests). The CLI maps these to exit code 2.
class InputError : public Error {
public:
    using Error::Error;
};

/// Parse failure with a location inside the offending text.
class ParseError : public InputError {
public:
    ParseError(const std::string& what, std::size_t line, std::size_t offset)
        : InputError(what + " (line " + std::to_string(line) + ", byte " + std::to_string(offset) + ")"),
          line_(line), offset_(offset) {}

    std::size_t line() const noexcept { return line_; }
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t line_;
    std::size_t offset_;
};

/// Numerical failure during training (non-finite gradients and the like).
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace slidegraph
