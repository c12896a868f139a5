#pragma once
// Synthetic discharge-note corpora shaped like the hospital sentence corpus.
// MIMIC-IV text is credentialed, so tests and fixtures run on these.

#include <cstddef>
#include <cstdint>

#include "cnseg/corpus.hpp"

namespace cnseg {

struct SyntheticOptions {
  std::size_t notes = 100;
  // Exact sentence total across all notes; 0 lets per-note sizes float.
  std::size_t total_sentences = 0;
  // Probability that a section opens with a header sentence.
  double header_rate = 0.6;
  // Every section opens with its canonical header followed by a colon.
  bool header_explicit = false;
  std::uint64_t seed = 1;
};

SentenceCorpus generate_sentence_corpus(const SyntheticOptions& options,
                                        const LabelOntology& ontology);

}  // namespace cnseg
