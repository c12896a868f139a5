#include "cnseg/error.hpp"

namespace cnseg {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::InvalidOntology: return "InvalidOntology";
    case Errc::OffsetOutOfRange: return "OffsetOutOfRange";
    case Errc::MalformedRecord: return "MalformedRecord";
    case Errc::UnknownLabel: return "UnknownLabel";
    case Errc::TooFewNotes: return "TooFewNotes";
    case Errc::DuplicateAlias: return "DuplicateAlias";
    case Errc::DegenerateFold: return "DegenerateFold";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::TransportError: return "TransportError";
    case Errc::AuthMissing: return "AuthMissing";
    case Errc::NoteMismatch: return "NoteMismatch";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::DegenerateVariance: return "DegenerateVariance";
    case Errc::TooFewGroups: return "TooFewGroups";
    case Errc::InvalidLabel: return "InvalidLabel";
    case Errc::UnknownSentence: return "UnknownSentence";
    case Errc::NoOverlap: return "NoOverlap";
    case Errc::UnknownCorpus: return "UnknownCorpus";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

Error::Error(Errc code, const std::string& what, std::size_t line_no)
    : std::runtime_error(std::string(errc_name(code)) + " (line " + std::to_string(line_no) +
                         "): " + what),
      code_(code),
      line_(line_no) {}

}  // namespace cnseg
