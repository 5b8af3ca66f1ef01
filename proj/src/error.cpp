#include "monli/error.hpp"

namespace monli {

Error::Error(ErrorKind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}

ParseError::ParseError(const std::string& source, std::size_t line, const std::string& what)
    : DataError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

CycleError::CycleError(const std::string& word)
    : DataError("lexicon contains a cycle through '" + word + "'"), word_(word) {}

}  // namespace monli
