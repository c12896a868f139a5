#include "cnseg/core.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "cnseg/error.hpp"
#include "cnseg/jsonl.hpp"

namespace cnseg {

bool is_space_byte(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\v' || c == '\f' || c == '\r';
}

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    while (i < n && is_space_byte(text[i])) ++i;
    if (i == n) break;
    std::size_t start = i;
    while (i < n && !is_space_byte(text[i])) ++i;
    tokens.push_back(Token{std::string(text.substr(start, i - start)), start, i});
  }
  return tokens;
}

std::size_t span_for_char(std::span<const Token> tokens, std::size_t text_size,
                          std::size_t char_offset) {
  if (char_offset >= text_size)
    throw Error(Errc::OffsetOutOfRange, "offset " + std::to_string(char_offset) +
                                            " outside text of size " + std::to_string(text_size));
  // First token whose end lies past the offset either contains it or is the
  // next token after the whitespace gap.
  auto it = std::upper_bound(tokens.begin(), tokens.end(), char_offset,
                             [](std::size_t off, const Token& t) { return off < t.char_end; });
  return static_cast<std::size_t>(it - tokens.begin());
}

std::size_t span_for_char(const ClinicalNote& note, std::size_t char_offset) {
  auto tokens = tokenize(note.text);
  return span_for_char(tokens, note.text.size(), char_offset);
}

void validate_spans(std::span<const SectionSpan> spans, std::size_t n_tokens) {
  if (n_tokens == 0) {
    if (!spans.empty()) throw Error(Errc::InvalidArgument, "spans over a token-free text");
    return;
  }
  if (spans.empty()) throw Error(Errc::InvalidArgument, "no spans over a non-empty text");
  std::size_t expected = 0;
  for (const auto& s : spans) {
    if (s.token_start != expected)
      throw Error(Errc::InvalidArgument, "span starting at token " + std::to_string(s.token_start) +
                                             " leaves a gap or overlap at " +
                                             std::to_string(expected));
    if (s.token_end <= s.token_start) throw Error(Errc::InvalidArgument, "empty span");
    expected = s.token_end;
  }
  if (expected != n_tokens)
    throw Error(Errc::InvalidArgument, "spans end at token " + std::to_string(expected) +
                                           " of " + std::to_string(n_tokens));
}

std::string normalize_label(std::string_view raw) {
  std::string out;
  bool pending_space = false;
  for (char c : raw) {
    if (is_space_byte(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  return out;
}

LabelOntology::LabelOntology(std::vector<Entry> entries, std::string fallback_label)
    : fallback_(normalize_label(fallback_label)) {
  std::map<std::string, std::string> alias_owner;
  for (auto& entry : entries) {
    std::string label = normalize_label(entry.label);
    if (label.empty()) throw Error(Errc::InvalidOntology, "empty label");
    if (index_.count(label)) throw Error(Errc::InvalidOntology, "duplicate label " + label);
    index_[label] = labels_.size();
    labels_.push_back(label);
    auto& aliases = aliases_[label];
    for (auto& alias : entry.aliases) {
      if (alias.empty()) throw Error(Errc::InvalidOntology, "empty alias for " + label);
      auto [it, inserted] = alias_owner.emplace(alias, label);
      if (!inserted && it->second != label)
        throw Error(Errc::DuplicateAlias,
                    "alias '" + alias + "' maps to both " + it->second + " and " + label);
      if (inserted) aliases.push_back(alias);
      auto [fit, fresh] = folded_aliases_.emplace(normalize_label(alias), label);
      if (!fresh && fit->second != label) fit->second.clear();
    }
  }
  if (!index_.count(fallback_))
    throw Error(Errc::InvalidOntology, "fallback label " + fallback_ + " is not a label");
}

LabelOntology LabelOntology::default_ontology() {
  // Discharge-summary headers as they appear in hospital notes.
  std::vector<Entry> entries = {
      {"SEX", {"Sex"}},
      {"SERVICE", {"Service"}},
      {"ALLERGIES", {"Allergies", "Allergy"}},
      {"ATTENDING", {"Attending"}},
      {"CHIEF COMPLAINT", {"Chief Complaint", "CC"}},
      {"MAJOR SURGICAL OR INVASIVE PROCEDURE",
       {"Major Surgical or Invasive Procedure", "Procedures"}},
      {"HISTORY OF PRESENT ILLNESS", {"History of Present Illness", "HPI"}},
      {"PAST MEDICAL HISTORY", {"Past Medical History", "PMH"}},
      {"SOCIAL HISTORY", {"Social History"}},
      {"FAMILY HISTORY", {"Family History"}},
      {"PHYSICAL EXAM", {"Physical Exam", "Physical Examination"}},
      {"PERTINENT RESULTS", {"Pertinent Results"}},
      {"HOSPITAL COURSE", {"Brief Hospital Course", "Hospital Course"}},
      {"MEDICATIONS", {"Medications on Admission", "Medications"}},
      {"DISCHARGE MEDICATIONS", {"Discharge Medications"}},
      {"DISCHARGE DISPOSITION", {"Discharge Disposition"}},
      {"DISCHARGE DIAGNOSIS", {"Discharge Diagnosis", "Discharge Diagnoses"}},
      {"DISCHARGE CONDITION", {"Discharge Condition"}},
      {"DISCHARGE INSTRUCTIONS", {"Discharge Instructions"}},
      {"FOLLOWUP INSTRUCTIONS", {"Followup Instructions"}},
      {"OTHER", {}},
  };
  return LabelOntology(std::move(entries), "OTHER");
}

LabelOntology LabelOntology::parse(std::string_view jsonl) {
  std::istringstream in{std::string(jsonl)};
  std::vector<Entry> entries;
  std::optional<std::string> fallback;
  for_each_jsonl(in, [&](const json& rec, std::size_t line_no) {
    Entry entry;
    entry.label = require_string(rec, "label", line_no);
    if (auto it = rec.find("aliases"); it != rec.end()) {
      if (!it->is_array()) throw Error(Errc::MalformedRecord, "aliases must be a list", line_no);
      for (const auto& a : *it) {
        if (!a.is_string()) throw Error(Errc::MalformedRecord, "alias must be a string", line_no);
        entry.aliases.push_back(a.get<std::string>());
      }
    }
    if (rec.value("fallback", false)) {
      if (fallback) throw Error(Errc::InvalidOntology, "more than one fallback label");
      fallback = entry.label;
    }
    entries.push_back(std::move(entry));
  });
  return LabelOntology(std::move(entries), fallback.value_or("OTHER"));
}

LabelOntology LabelOntology::load(const std::filesystem::path& path) {
  return parse(read_file(path));
}

const std::vector<std::string>& LabelOntology::aliases_of(const std::string& label) const {
  static const std::vector<std::string> none;
  auto it = aliases_.find(label);
  return it == aliases_.end() ? none : it->second;
}

bool LabelOntology::contains(std::string_view label) const {
  return index_.count(std::string(label)) > 0;
}

std::optional<std::string> LabelOntology::canonicalize(std::string_view raw) const {
  std::string norm = normalize_label(raw);
  if (index_.count(norm)) return norm;
  auto it = folded_aliases_.find(norm);
  if (it == folded_aliases_.end() || it->second.empty()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> LabelOntology::index_of(std::string_view canonical) const {
  auto it = index_.find(std::string(canonical));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::string LabelOntology::to_jsonl() const {
  std::string out;
  for (const auto& label : labels_) {
    json rec = {{"label", label}, {"aliases", aliases_of(label)}};
    if (label == fallback_) rec["fallback"] = true;
    out += rec.dump() + "\n";
  }
  return out;
}

}  // namespace cnseg
