#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cnseg {

enum class Errc {
  InvalidArgument,
  InvalidOntology,
  OffsetOutOfRange,
  MalformedRecord,
  UnknownLabel,
  TooFewNotes,
  DuplicateAlias,
  DegenerateFold,
  EmptyInput,
  TransportError,
  AuthMissing,
  NoteMismatch,
  LengthMismatch,
  DegenerateVariance,
  TooFewGroups,
  InvalidLabel,
  UnknownSentence,
  NoOverlap,
  UnknownCorpus,
  IoError,
};

std::string_view errc_name(Errc code);

// Every failure surfaced by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what);
  Error(Errc code, const std::string& what, std::size_t line_no);

  Errc code() const noexcept { return code_; }
  // Set for MalformedRecord raised while reading a line-delimited file.
  std::optional<std::size_t> line() const noexcept { return line_; }

 private:
  Errc code_;
  std::optional<std::size_t> line_;
};

}  // namespace cnseg
