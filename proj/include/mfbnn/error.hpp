#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mfbnn {

// Base for every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class FactorizationError : public Error {
public:
    using Error::Error;
};

// Raised by the training loop; carries the step at which the loss went bad.
class TrainingError : public Error {
public:
    TrainingError(const std::string& what, long step)
        : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
    long step() const noexcept { return step_; }

private:
    long step_;
};

// Ingestion error. Row and column are 1-based file coordinates; 0 means "not applicable".
class DataError : public Error {
public:
    DataError(const std::string& what, std::size_t row = 0, std::size_t col = 0)
        : Error(format(what, row, col)), row_(row), col_(col) {}
    std::size_t row() const noexcept { return row_; }
    std::size_t col() const noexcept { return col_; }

private:
    static std::string format(const std::string& what, std::size_t row, std::size_t col) {
        std::string s = what;
        if (row != 0) s += " [row " + std::to_string(row);
        if (col != 0) s += (row != 0 ? ", col " : " [col ") + std::to_string(col);
        if (row != 0 || col != 0) s += "]";
        return s;
    }
    std::size_t row_;
    std::size_t col_;
};

}  // namespace mfbnn
