#pragma once
// Shared data model: notes, section spans, the label ontology and the
// whitespace tokenizer every boundary computation is defined over.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cnseg {

struct Token {
  std::string text;
  std::size_t char_start = 0;  // byte offset, inclusive
  std::size_t char_end = 0;    // byte offset, exclusive

  bool operator==(const Token&) const = default;
};

// Maximal runs of non-whitespace bytes (ASCII space, \t, \n, \v, \f, \r).
std::vector<Token> tokenize(std::string_view text);

bool is_space_byte(char c);

struct SectionSpan {
  std::string label;
  std::size_t token_start = 0;
  std::size_t token_end = 0;  // exclusive
  std::size_t char_start = 0;
  std::size_t char_end = 0;  // exclusive

  bool operator==(const SectionSpan&) const = default;
};

struct ClinicalNote {
  std::string note_id;
  std::string text;
  std::optional<std::vector<SectionSpan>> gold;
};

// Index of the token containing `char_offset`, or of the next token when the
// offset falls in whitespace. Offsets in trailing whitespace map to
// tokens.size().
std::size_t span_for_char(std::span<const Token> tokens, std::size_t text_size,
                          std::size_t char_offset);
std::size_t span_for_char(const ClinicalNote& note, std::size_t char_offset);

struct LabeledSentence {
  std::string sentence_id;
  std::string note_id;
  std::size_t position = 0;
  std::string text;
  std::string label;
};

struct AnnotationRecord {
  std::string sentence_id;
  std::string annotator_id;
  std::string label;
  std::int64_t timestamp_ms = 0;  // UTC

  bool operator==(const AnnotationRecord&) const = default;
};

struct SegmentationResult {
  std::string note_id;
  std::vector<SectionSpan> spans;
  std::string method;
};

// Throws InvalidArgument unless spans are sorted, non-empty, non-overlapping
// and cover [0, n_tokens) exactly.
void validate_spans(std::span<const SectionSpan> spans, std::size_t n_tokens);

// Upper-case, trim and collapse internal whitespace runs to one space.
std::string normalize_label(std::string_view raw);

class LabelOntology {
 public:
  struct Entry {
    std::string label;
    std::vector<std::string> aliases;
  };

  LabelOntology(std::vector<Entry> entries, std::string fallback_label = "OTHER");

  static LabelOntology default_ontology();
  // One JSON record per line: {"label": ..., "aliases": [...], "fallback": true?}
  static LabelOntology load(const std::filesystem::path& path);
  static LabelOntology parse(std::string_view jsonl);

  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<std::string>& aliases_of(const std::string& label) const;
  const std::string& fallback_label() const { return fallback_; }
  std::size_t size() const { return labels_.size(); }

  bool contains(std::string_view label) const;
  // Canonical id for a case/whitespace-insensitive spelling of a label or of
  // one of its aliases.
  std::optional<std::string> canonicalize(std::string_view raw) const;
  std::optional<std::size_t> index_of(std::string_view canonical) const;

  std::string to_jsonl() const;

 private:
  std::vector<std::string> labels_;
  std::map<std::string, std::vector<std::string>> aliases_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, std::string> folded_aliases_;  // empty value = ambiguous
  std::string fallback_;
};

}  // namespace cnseg
