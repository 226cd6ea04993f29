#include "fewshot/errors.hpp"

namespace fewshot {

CorruptionError::CorruptionError(const std::string& what, std::size_t offset)
    : DataError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

IoError::IoError(const std::string& what, const std::string& path)
    : DataError(what + ": " + path), path_(path) {}

}  // namespace fewshot
