#pragma once

#include <stdexcept>
#include <string>

namespace scan {

// Data-level failures: malformed files, bad references, inconsistent corpora.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : DataError {
    ParseError(const std::string& msg, int line, int col)
        : DataError(msg + " at line " + std::to_string(line) + ", column " +
                    std::to_string(col)),
          line(line), col(col) {}
    explicit ParseError(const std::string& msg) : DataError(msg), line(0), col(0) {}
    int line;
    int col;
};

// Tensor shape or graph misuse.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf or other numeric breakdown.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace scan
