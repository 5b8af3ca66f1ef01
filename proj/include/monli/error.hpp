#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace monli {

// Broad error categories. The CLI maps each to a distinct exit code.
enum class ErrorKind { Config, Data, Stage, Io };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message);
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message) : Error(ErrorKind::Config, message) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& message) : Error(ErrorKind::Data, message) {}
};

class StageError : public Error {
public:
    explicit StageError(const std::string& message) : Error(ErrorKind::Stage, message) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& message) : Error(ErrorKind::Io, message) {}
};

// Malformed line in a text input; line numbers are 1-based.
class ParseError : public DataError {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& what);
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class CycleError : public DataError {
public:
    explicit CycleError(const std::string& word);
    const std::string& word() const noexcept { return word_; }

private:
    std::string word_;
};

}  // namespace monli
