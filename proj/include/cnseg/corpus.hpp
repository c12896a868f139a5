#pragma once
// Sentence-labeled corpora, freetext synthesis, fold assignment and the
// tag distribution statistics.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cnseg/core.hpp"

namespace cnseg {

enum class LabelMode { Strict, Lenient };

class SentenceCorpus {
 public:
  // Sorts sentences by (note order of first appearance, position) and checks
  // labels, contiguous positions and that every sentence has a token.
  SentenceCorpus(std::vector<LabeledSentence> sentences, LabelOntology ontology);

  const std::vector<LabeledSentence>& sentences() const { return sentences_; }
  const LabelOntology& ontology() const { return ontology_; }
  // Note ids in first-appearance order.
  const std::vector<std::string>& note_ids() const { return note_ids_; }
  std::span<const LabeledSentence> note_sentences(const std::string& note_id) const;
  std::size_t note_count() const { return note_ids_.size(); }

  // Sub-corpus restricted to the given notes, keeping this corpus's order.
  SentenceCorpus subset(std::span<const std::string> note_ids) const;

 private:
  std::vector<LabeledSentence> sentences_;
  LabelOntology ontology_;
  std::vector<std::string> note_ids_;
  std::map<std::string, std::pair<std::size_t, std::size_t>> ranges_;
};

// Records: {"note_id", "position", "label", "text", "sentence_id"?}, one per line.
SentenceCorpus load_sentence_corpus(const std::filesystem::path& path, const LabelOntology& ontology,
                                    LabelMode mode = LabelMode::Lenient);
SentenceCorpus parse_sentence_corpus(std::istream& in, const LabelOntology& ontology,
                                     LabelMode mode = LabelMode::Lenient);
std::string sentence_corpus_to_jsonl(const SentenceCorpus& corpus);

struct FreetextCorpus {
  std::vector<ClinicalNote> notes;
};

inline constexpr char kSentenceJoiner = '\n';

FreetextCorpus synthesize_freetext(const SentenceCorpus& corpus);

// One record per note: {"note_id", "text", "spans": [{label, char_start,
// char_end, token_start, token_end}]}.
std::string freetext_to_jsonl(const FreetextCorpus& corpus);
FreetextCorpus load_freetext(const std::filesystem::path& path, const LabelOntology& ontology);
FreetextCorpus parse_freetext(std::istream& in, const LabelOntology& ontology);

std::string segmentations_to_jsonl(std::span<const SegmentationResult> results);

struct FoldRun {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

struct SplitPlan {
  std::size_t k = 10;
  std::uint64_t seed = 0;
  std::map<std::string, std::size_t> assignments;

  std::vector<std::string> fold(std::size_t index) const;
  // test = fold i, validation = fold (i + 1) mod k, train = the rest.
  FoldRun run(std::size_t index) const;
};

SplitPlan make_splits(std::span<const std::string> note_ids, std::size_t k, std::uint64_t seed);
SplitPlan make_splits(const SentenceCorpus& corpus, std::size_t k, std::uint64_t seed);

struct TagStatistics {
  std::map<std::string, std::size_t> label_counts;
  std::map<std::string, std::size_t> tags_per_note;
  // label -> sentence length in tokens -> sentence count
  std::map<std::string, std::map<std::size_t, std::size_t>> sentence_lengths;
  std::size_t min_count = 50;

  std::map<std::string, std::size_t> frequent_labels() const;
  // tag count -> number of notes with that many tags
  std::map<std::size_t, std::size_t> tags_per_note_histogram() const;
  std::size_t tags_per_note_mode() const;
  double mean_tags_per_note() const;
};

TagStatistics tag_statistics(const SentenceCorpus& corpus, std::size_t min_count = 50);

// Deterministic helpers whose output depends only on the seed, independent of
// the standard library's distribution implementations.
std::uint64_t bounded_draw(std::uint64_t& state, std::uint64_t bound);
std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace cnseg
