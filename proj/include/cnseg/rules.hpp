#pragma once
// Header-matching segmenters: a plain regex header matcher and a
// lexicon-normalizing sectionizer built on the same engine.

#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "cnseg/core.hpp"

namespace cnseg::rules {

struct MatcherOptions {
  bool case_insensitive = true;
  bool require_colon = true;
  bool line_anchored = true;
  // Alias words match across any run of spaces/tabs ("Chief   Complaint:").
  bool flexible_whitespace = false;
  // Join a line holding a colon-less alias prefix with its continuation.
  bool join_multiline_headers = false;
};

enum class Method { Regex, Rules };

// "regex": literal aliases. "rules": adds whitespace-normalized alias
// matching. Both fill text before the first header with the fallback label.
MatcherOptions options_for(Method method);
std::string_view method_name(Method method);
std::optional<Method> parse_method(std::string_view name);

struct HeaderMatch {
  std::string label;
  std::string alias;
  std::size_t alias_start = 0;  // byte offset within the matched line
  std::size_t match_end = 0;
};

class HeaderMatcher {
 public:
  std::optional<HeaderMatch> match_line(std::string_view line) const;

  const LabelOntology& ontology() const { return ontology_; }
  const MatcherOptions& options() const { return options_; }
  std::size_t pattern_count() const { return patterns_.size(); }

  // True when the trimmed colon-less line is a proper prefix of some alias.
  bool is_alias_prefix(std::string_view line) const;

 private:
  friend HeaderMatcher compile_matcher(const LabelOntology&, const MatcherOptions&);
  HeaderMatcher(LabelOntology ontology, MatcherOptions options)
      : ontology_(std::move(ontology)), options_(options) {}

  struct Pattern {
    std::regex re;
    std::string alias;
    std::string label;
    std::size_t label_rank = 0;
  };


  LabelOntology ontology_;
  MatcherOptions options_;
  std::vector<Pattern> patterns_;
  std::vector<std::string> alias_keys_;  // normalized aliases for prefix tests
};

// One pattern per alias, plus the canonical label itself. Throws
// DuplicateAlias when two labels share an alias under the options' folding.
HeaderMatcher compile_matcher(const LabelOntology& ontology, const MatcherOptions& options);

SegmentationResult segment_rules(const HeaderMatcher& matcher, const ClinicalNote& note,
                                 std::string method = "rules");

}  // namespace cnseg::rules
