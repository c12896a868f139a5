#include "cnseg/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <unordered_map>

#include "cnseg/error.hpp"
#include "cnseg/jsonl.hpp"

namespace cnseg {

namespace {

std::string default_sentence_id(const std::string& note_id, std::size_t position) {
  return note_id + ":" + std::to_string(position);
}

bool has_token(std::string_view text) {
  return std::any_of(text.begin(), text.end(), [](char c) { return !is_space_byte(c); });
}

}  // namespace

SentenceCorpus::SentenceCorpus(std::vector<LabeledSentence> sentences, LabelOntology ontology)
    : ontology_(std::move(ontology)) {
  std::unordered_map<std::string, std::size_t> first_seen;
  for (const auto& s : sentences) {
    if (s.note_id.empty()) throw Error(Errc::InvalidArgument, "empty note_id");
    if (first_seen.emplace(s.note_id, first_seen.size()).second) note_ids_.push_back(s.note_id);
  }
  std::stable_sort(sentences.begin(), sentences.end(),
                   [&](const LabeledSentence& a, const LabeledSentence& b) {
                     const auto na = first_seen[a.note_id];
                     const auto nb = first_seen[b.note_id];
                     return na != nb ? na < nb : a.position < b.position;
                   });
  std::set<std::string> ids;
  for (std::size_t i = 0; i < sentences.size();) {
    std::size_t j = i;
    while (j < sentences.size() && sentences[j].note_id == sentences[i].note_id) {
      const auto& s = sentences[j];
      if (s.position != j - i)
        throw Error(Errc::InvalidArgument, "note " + s.note_id + " positions are not 0..n-1");
      if (!ontology_.contains(s.label))
        throw Error(Errc::UnknownLabel, s.label + " is not in the ontology");
      if (!has_token(s.text))
        throw Error(Errc::InvalidArgument, "sentence " + s.sentence_id + " has no tokens");
      if (!ids.insert(s.sentence_id).second)
        throw Error(Errc::InvalidArgument, "duplicate sentence_id " + s.sentence_id);
      ++j;
    }
    ranges_[sentences[i].note_id] = {i, j};
    i = j;
  }
  sentences_ = std::move(sentences);
}

std::span<const LabeledSentence> SentenceCorpus::note_sentences(const std::string& note_id) const {
  auto it = ranges_.find(note_id);
  if (it == ranges_.end()) return {};
  return std::span<const LabeledSentence>(sentences_).subspan(
      it->second.first, it->second.second - it->second.first);
}

SentenceCorpus SentenceCorpus::subset(std::span<const std::string> note_ids) const {
  std::set<std::string> wanted(note_ids.begin(), note_ids.end());
  std::vector<LabeledSentence> kept;
  for (const auto& id : note_ids_) {
    if (!wanted.count(id)) continue;
    auto s = note_sentences(id);
    kept.insert(kept.end(), s.begin(), s.end());
  }
  return SentenceCorpus(std::move(kept), ontology_);
}

SentenceCorpus parse_sentence_corpus(std::istream& in, const LabelOntology& ontology,
                                     LabelMode mode) {
  std::vector<LabeledSentence> sentences;
  std::map<std::string, std::map<std::size_t, std::size_t>> positions;  // note -> pos -> line
  std::map<std::string, std::size_t> id_lines;
  for_each_jsonl(in, [&](const json& rec, std::size_t line_no) {
    LabeledSentence s;
    s.note_id = require_string(rec, "note_id", line_no);
    if (s.note_id.empty()) throw Error(Errc::MalformedRecord, "empty note_id", line_no);
    s.position = require_index(rec, "position", line_no);
    s.text = require_string(rec, "text", line_no);
    if (!has_token(s.text)) throw Error(Errc::MalformedRecord, "sentence has no tokens", line_no);
    const std::string raw_label = require_string(rec, "label", line_no);
    if (auto canonical = ontology.canonicalize(raw_label)) {
      s.label = *canonical;
    } else if (mode == LabelMode::Strict) {
      throw Error(Errc::UnknownLabel, "'" + raw_label + "' on line " + std::to_string(line_no));
    } else {
      s.label = ontology.fallback_label();
    }
    s.sentence_id = rec.contains("sentence_id") ? require_string(rec, "sentence_id", line_no)
                                                : default_sentence_id(s.note_id, s.position);
    if (!id_lines.emplace(s.sentence_id, line_no).second)
      throw Error(Errc::MalformedRecord, "duplicate sentence_id " + s.sentence_id, line_no);
    if (!positions[s.note_id].emplace(s.position, line_no).second)
      throw Error(Errc::MalformedRecord, "duplicate position in note " + s.note_id, line_no);
    sentences.push_back(std::move(s));
  });
  for (const auto& [note_id, by_pos] : positions) {
    std::size_t expected = 0;
    for (const auto& [pos, line_no] : by_pos) {
      if (pos != expected)
        throw Error(Errc::MalformedRecord,
                    "note " + note_id + " skips position " + std::to_string(expected), line_no);
      ++expected;
    }
  }
  return SentenceCorpus(std::move(sentences), ontology);
}

SentenceCorpus load_sentence_corpus(const std::filesystem::path& path, const LabelOntology& ontology,
                                    LabelMode mode) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  return parse_sentence_corpus(in, ontology, mode);
}

std::string sentence_corpus_to_jsonl(const SentenceCorpus& corpus) {
  std::string out;
  for (const auto& s : corpus.sentences()) {
    json rec = {{"note_id", s.note_id},
                {"position", s.position},
                {"label", s.label},
                {"text", s.text},
                {"sentence_id", s.sentence_id}};
    out += rec.dump() + "\n";
  }
  return out;
}

FreetextCorpus synthesize_freetext(const SentenceCorpus& corpus) {
  if (corpus.sentences().empty()) throw Error(Errc::EmptyInput, "empty sentence corpus");
  FreetextCorpus out;
  out.notes.reserve(corpus.note_count());
  for (const auto& note_id : corpus.note_ids()) {
    ClinicalNote note;
    note.note_id = note_id;
    std::vector<std::pair<std::size_t, std::string>> starts;  // char offset, label
    std::vector<std::size_t> run_ends;
    std::string last_label;
    for (const auto& s : corpus.note_sentences(note_id)) {
      if (s.position > 0) note.text.push_back(kSentenceJoiner);
      if (s.position == 0 || s.label != last_label) {
        if (s.position > 0) run_ends.push_back(note.text.size() - 1);
        starts.emplace_back(note.text.size(), s.label);
      }
      note.text += s.text;
      last_label = s.label;
    }
    run_ends.push_back(note.text.size());

    const auto tokens = tokenize(note.text);
    std::vector<SectionSpan> spans;
    for (std::size_t i = 0; i < starts.size(); ++i) {
      SectionSpan span;
      span.label = starts[i].second;
      span.char_start = starts[i].first;
      span.char_end = run_ends[i];
      span.token_start = span_for_char(tokens, note.text.size(), span.char_start);
      spans.push_back(std::move(span));
    }
    for (std::size_t i = 0; i < spans.size(); ++i)
      spans[i].token_end = i + 1 < spans.size() ? spans[i + 1].token_start : tokens.size();
    validate_spans(spans, tokens.size());
    note.gold = std::move(spans);
    out.notes.push_back(std::move(note));
  }
  return out;
}

namespace {

json spans_to_json(const std::vector<SectionSpan>& spans) {
  json arr = json::array();
  for (const auto& s : spans) {
    arr.push_back({{"label", s.label},
                   {"char_start", s.char_start},
                   {"char_end", s.char_end},
                   {"token_start", s.token_start},
                   {"token_end", s.token_end}});
  }
  return arr;
}

}  // namespace

std::string freetext_to_jsonl(const FreetextCorpus& corpus) {
  std::string out;
  for (const auto& note : corpus.notes) {
    json rec = {{"note_id", note.note_id}, {"text", note.text}};
    if (note.gold) rec["spans"] = spans_to_json(*note.gold);
    out += rec.dump() + "\n";
  }
  return out;
}

std::string segmentations_to_jsonl(std::span<const SegmentationResult> results) {
  std::string out;
  for (const auto& r : results) {
    json rec = {{"note_id", r.note_id}, {"method", r.method}, {"spans", spans_to_json(r.spans)}};
    out += rec.dump() + "\n";
  }
  return out;
}

FreetextCorpus parse_freetext(std::istream& in, const LabelOntology& ontology) {
  FreetextCorpus out;
  std::set<std::string> seen;
  for_each_jsonl(in, [&](const json& rec, std::size_t line_no) {
    ClinicalNote note;
    note.note_id = require_string(rec, "note_id", line_no);
    note.text = require_string(rec, "text", line_no);
    if (note.note_id.empty() || !seen.insert(note.note_id).second)
      throw Error(Errc::MalformedRecord, "empty or duplicate note_id", line_no);
    if (auto it = rec.find("spans"); it != rec.end()) {
      if (!it->is_array()) throw Error(Errc::MalformedRecord, "spans must be a list", line_no);
      const auto tokens = tokenize(note.text);
      std::vector<SectionSpan> spans;
      for (const auto& js : *it) {
        SectionSpan s;
        const std::string raw = require_string(js, "label", line_no);
        auto canonical = ontology.canonicalize(raw);
        if (!canonical) throw Error(Errc::UnknownLabel, "'" + raw + "' on line " + std::to_string(line_no));
        s.label = *canonical;
        s.char_start = require_index(js, "char_start", line_no);
        s.char_end = require_index(js, "char_end", line_no);
        if (s.char_start >= note.text.size() || s.char_end > note.text.size() ||
            s.char_end <= s.char_start)
          throw Error(Errc::MalformedRecord, "span char range out of bounds", line_no);
        s.token_start = span_for_char(tokens, note.text.size(), s.char_start);
        spans.push_back(std::move(s));
      }
      for (std::size_t i = 0; i < spans.size(); ++i)
        spans[i].token_end = i + 1 < spans.size() ? spans[i + 1].token_start : tokens.size();
      try {
        validate_spans(spans, tokens.size());
      } catch (const Error& e) {
        throw Error(Errc::MalformedRecord, e.what(), line_no);
      }
      note.gold = std::move(spans);
    }
    out.notes.push_back(std::move(note));
  });
  return out;
}

FreetextCorpus load_freetext(const std::filesystem::path& path, const LabelOntology& ontology) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  return parse_freetext(in, ontology);
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t bounded_draw(std::uint64_t& state, std::uint64_t bound) {
  if (bound == 0) throw Error(Errc::InvalidArgument, "bound must be positive");
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t r = splitmix64(state);
    if (r >= threshold) return r % bound;
  }
}

std::vector<std::string> SplitPlan::fold(std::size_t index) const {
  std::vector<std::string> ids;
  for (const auto& [id, f] : assignments)
    if (f == index) ids.push_back(id);
  return ids;
}

FoldRun SplitPlan::run(std::size_t index) const {
  if (index >= k) throw Error(Errc::InvalidArgument, "fold run index out of range");
  const std::size_t val = (index + 1) % k;
  FoldRun out;
  for (const auto& [id, f] : assignments) {
    if (f == index) {
      out.test.push_back(id);
    } else if (f == val) {
      out.validation.push_back(id);
    } else {
      out.train.push_back(id);
    }
  }
  return out;
}

SplitPlan make_splits(std::span<const std::string> note_ids, std::size_t k, std::uint64_t seed) {
  if (k < 3) throw Error(Errc::InvalidArgument, "k must be at least 3");
  std::vector<std::string> ids(note_ids.begin(), note_ids.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.size() < k)
    throw Error(Errc::TooFewNotes,
                std::to_string(ids.size()) + " notes for " + std::to_string(k) + " folds");
  std::uint64_t state = seed;
  for (std::size_t i = ids.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(bounded_draw(state, i + 1));
    std::swap(ids[i], ids[j]);
  }
  SplitPlan plan;
  plan.k = k;
  plan.seed = seed;
  for (std::size_t i = 0; i < ids.size(); ++i) plan.assignments[ids[i]] = i % k;
  return plan;
}

SplitPlan make_splits(const SentenceCorpus& corpus, std::size_t k, std::uint64_t seed) {
  return make_splits(corpus.note_ids(), k, seed);
}

std::map<std::string, std::size_t> TagStatistics::frequent_labels() const {
  std::map<std::string, std::size_t> out;
  for (const auto& [label, count] : label_counts)
    if (count >= min_count) out.emplace(label, count);
  return out;
}

std::map<std::size_t, std::size_t> TagStatistics::tags_per_note_histogram() const {
  std::map<std::size_t, std::size_t> hist;
  for (const auto& [note, count] : tags_per_note) ++hist[count];
  return hist;
}

std::size_t TagStatistics::tags_per_note_mode() const {
  std::size_t mode = 0;
  std::size_t best = 0;
  for (const auto& [count, notes] : tags_per_note_histogram()) {
    if (notes > best) {
      best = notes;
      mode = count;
    }
  }
  return mode;
}

double TagStatistics::mean_tags_per_note() const {
  if (tags_per_note.empty()) return 0.0;
  std::size_t total = 0;
  for (const auto& [note, count] : tags_per_note) total += count;
  return static_cast<double>(total) / static_cast<double>(tags_per_note.size());
}

TagStatistics tag_statistics(const SentenceCorpus& corpus, std::size_t min_count) {
  if (corpus.sentences().empty()) throw Error(Errc::EmptyInput, "empty sentence corpus");
  TagStatistics stats;
  stats.min_count = min_count;
  for (const auto& s : corpus.sentences()) {
    ++stats.label_counts[s.label];
    ++stats.tags_per_note[s.note_id];
    ++stats.sentence_lengths[s.label][tokenize(s.text).size()];
  }
  return stats;
}

}  // namespace cnseg
