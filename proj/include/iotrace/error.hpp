#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace iotrace {

enum class Errc {
  ConflictingRegistration,
  UnknownFunction,
  InvalidRecord,
  MalformedGrammar,
  IncompleteMapping,
  TableFull,
  DoubleOpen,
  DepthOverflow,
  StackMismatch,
  UnbalancedCalls,
  CorruptArchive,
  IoFailure,
  InvalidArgument,
};

inline std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::ConflictingRegistration: return "ConflictingRegistration";
    case Errc::UnknownFunction: return "UnknownFunction";
    case Errc::InvalidRecord: return "InvalidRecord";
    case Errc::MalformedGrammar: return "MalformedGrammar";
    case Errc::IncompleteMapping: return "IncompleteMapping";
    case Errc::TableFull: return "TableFull";
    case Errc::DoubleOpen: return "DoubleOpen";
    case Errc::DepthOverflow: return "DepthOverflow";
    case Errc::StackMismatch: return "StackMismatch";
    case Errc::UnbalancedCalls: return "UnbalancedCalls";
    case Errc::CorruptArchive: return "CorruptArchive";
    case Errc::IoFailure: return "IoFailure";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Base exception for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Raised by archive readers. Carries the file and byte offset where
/// decoding failed so corrupted bundles can be diagnosed.
class CorruptArchiveError : public Error {
 public:
  CorruptArchiveError(std::string file, std::uint64_t offset, const std::string& reason)
      : Error(Errc::CorruptArchive,
              file + " @" + std::to_string(offset) + ": " + reason),
        file_(std::move(file)),
        offset_(offset) {}

  const std::string& file() const noexcept { return file_; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::string file_;
  std::uint64_t offset_;
};

}  // namespace iotrace
