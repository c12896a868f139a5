#include "cnseg/rules.hpp"

#include <algorithm>
#include <map>

#include "cnseg/error.hpp"

namespace cnseg::rules {

MatcherOptions options_for(Method method) {
  MatcherOptions opts;
  opts.flexible_whitespace = method == Method::Rules;
  return opts;
}

std::string_view method_name(Method method) { return method == Method::Rules ? "rules" : "regex"; }

std::optional<Method> parse_method(std::string_view name) {
  if (name == "rules") return Method::Rules;
  if (name == "regex") return Method::Regex;
  return std::nullopt;
}

namespace {

std::string escape_regex(std::string_view text) {
  static const std::string_view specials = R"(\^$.|?*+()[]{}/)";
  std::string out;
  for (char c : text) {
    if (specials.find(c) != std::string_view::npos) out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

std::string alias_key(std::string_view alias, const MatcherOptions& opts) {
  std::string key;
  bool pending = false;
  for (char c : alias) {
    if (c == ' ' || c == '\t') {
      pending = !key.empty();
      continue;
    }
    if (pending) key.push_back(' ');
    pending = false;
    key.push_back(opts.case_insensitive ? static_cast<char>(std::tolower(static_cast<unsigned char>(c)))
                                        : c);
  }
  return key;
}

std::string build_pattern(std::string_view alias, const MatcherOptions& opts) {
  std::string body;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    if (!body.empty()) body += opts.flexible_whitespace ? "[ \\t]+" : " ";
    body += escape_regex(word);
    word.clear();
  };
  for (char c : alias) {
    if (c == ' ' || c == '\t') {
      flush();
    } else {
      word.push_back(c);
    }
  }
  flush();

  std::string pattern = opts.line_anchored ? "^[ \\t]*(" : "(?:^|[^A-Za-z0-9])(";
  pattern += body + ")";
  pattern += opts.require_colon ? "[ \\t]*:" : "(?![A-Za-z0-9])[ \\t]*:?";
  return pattern;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space_byte(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space_byte(s.back())) s.remove_suffix(1);
  return s;
}

}  // namespace

HeaderMatcher compile_matcher(const LabelOntology& ontology, const MatcherOptions& options) {
  HeaderMatcher matcher(ontology, options);
  std::map<std::string, std::string> owner;  // folded alias -> label
  auto flags = std::regex::ECMAScript | std::regex::optimize;
  if (options.case_insensitive) flags |= std::regex::icase;

  for (std::size_t rank = 0; rank < ontology.labels().size(); ++rank) {
    const std::string& label = ontology.labels()[rank];
    std::vector<std::string> aliases = ontology.aliases_of(label);
    aliases.push_back(label);
    for (const auto& alias : aliases) {
      const std::string key = alias_key(alias, options);
      if (key.empty()) continue;
      auto [it, inserted] = owner.emplace(key, label);
      if (!inserted) {
        if (it->second != label)
          throw Error(Errc::DuplicateAlias,
                      "alias '" + alias + "' matches both " + it->second + " and " + label);
        continue;
      }
      matcher.patterns_.push_back(
          HeaderMatcher::Pattern{std::regex(build_pattern(alias, options), flags), alias, label, rank});
      matcher.alias_keys_.push_back(key);
    }
  }
  return matcher;
}

std::optional<HeaderMatch> HeaderMatcher::match_line(std::string_view line) const {
  std::optional<HeaderMatch> best;
  std::size_t best_len = 0;
  std::size_t best_rank = 0;
  const std::string text(line);
  for (const auto& p : patterns_) {
    std::smatch m;
    if (!std::regex_search(text, m, p.re)) continue;
    const std::size_t len = p.alias.size();
    const auto start = static_cast<std::size_t>(m.position(1));
    const bool better = !best || len > best_len ||
                        (len == best_len && (start < best->alias_start ||
                                             (start == best->alias_start && p.label_rank < best_rank)));
    if (!better) continue;
    best = HeaderMatch{p.label, p.alias, start, static_cast<std::size_t>(m.position(0) + m.length(0))};
    best_len = len;
    best_rank = p.label_rank;
  }
  return best;
}

bool HeaderMatcher::is_alias_prefix(std::string_view line) const {
  const std::string key = alias_key(trim(line), options_);
  if (key.empty()) return false;
  for (const auto& alias : alias_keys_)
    if (alias.size() > key.size() && alias.compare(0, key.size(), key) == 0 &&
        alias[key.size()] == ' ')
      return true;
  return false;
}

SegmentationResult segment_rules(const HeaderMatcher& matcher, const ClinicalNote& note,
                                 std::string method) {
  if (note.text.empty()) throw Error(Errc::EmptyInput, "note " + note.note_id + " has no text");
  SegmentationResult result{note.note_id, {}, std::move(method)};
  const auto tokens = tokenize(note.text);
  if (tokens.empty()) return result;

  struct Line {
    std::size_t start;
    std::string_view text;
  };
  std::vector<Line> lines;
  const std::string_view text(note.text);
  for (std::size_t pos = 0; pos <= text.size();) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    lines.push_back(Line{pos, text.substr(pos, nl - pos)});
    pos = nl + 1;
  }

  std::vector<std::pair<std::size_t, std::string>> starts;  // token index, label
  auto open = [&](std::size_t char_offset, const std::string& label) {
    const std::size_t tok = span_for_char(tokens, text.size(), char_offset);
    if (tok >= tokens.size()) return;
    if (!starts.empty() && starts.back().first >= tok) return;
    starts.emplace_back(tok, label);
  };

  for (std::size_t i = 0; i < lines.size(); ++i) {
    const Line& line = lines[i];
    if (auto m = matcher.match_line(line.text)) {
      open(line.start + m->alias_start, m->label);
      continue;
    }
    if (!matcher.options().join_multiline_headers || i + 1 >= lines.size()) continue;
    if (!matcher.is_alias_prefix(line.text)) continue;
    const std::string_view head = trim(line.text);
    const std::string joined = std::string(head) + " " + std::string(trim(lines[i + 1].text));
    auto m = matcher.match_line(joined);
    if (!m || m->alias_start != 0 || m->alias.size() <= head.size()) continue;
    const std::size_t lead = static_cast<std::size_t>(head.data() - line.text.data());
    open(line.start + lead, m->label);
    ++i;  // the continuation line belongs to this header
  }

  if (starts.empty() || starts.front().first != 0)
    starts.insert(starts.begin(), {0, matcher.ontology().fallback_label()});

  for (std::size_t i = 0; i < starts.size(); ++i) {
    SectionSpan span;
    span.label = starts[i].second;
    span.token_start = starts[i].first;
    span.token_end = i + 1 < starts.size() ? starts[i + 1].first : tokens.size();
    span.char_start = tokens[span.token_start].char_start;
    span.char_end = tokens[span.token_end - 1].char_end;
    result.spans.push_back(std::move(span));
  }
  return result;
}

}  // namespace cnseg::rules
