#include "cnseg/llm.hpp"

#include <openssl/evp.h>

#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "cnseg/error.hpp"
#include "cnseg/jsonl.hpp"

namespace cnseg::llm {

void LlmEndpoint::validate() const {
  if (name.empty()) throw Error(Errc::InvalidArgument, "endpoint needs a name");
  if (max_parallel < 1) throw Error(Errc::InvalidArgument, "max_parallel must be at least 1");
  if (max_parallel > 1024) throw Error(Errc::InvalidArgument, "max_parallel above 1024");
}

std::string_view task_kind_name(TaskKind kind) {
  return kind == TaskKind::SentenceClassify ? "classify" : "segment";
}

std::string_view parse_status_name(ParseStatus status) {
  switch (status) {
    case ParseStatus::Unparsed: return "UNPARSED";
    case ParseStatus::Ok: return "OK";
    case ParseStatus::Partial: return "PARTIAL";
    case ParseStatus::Failed: return "FAILED";
  }
  return "UNPARSED";
}

namespace {

constexpr std::string_view kNoteBegin = "----- BEGIN NOTE -----\n";
constexpr std::string_view kNoteEnd = "\n----- END NOTE -----";
constexpr std::string_view kSentencesIntro = "Sentences (JSON array; index = position in the array):\n";

std::string label_block(const LabelOntology& ontology) {
  std::string out = "Allowed labels:\n";
  for (const auto& label : ontology.labels()) out += "- " + label + "\n";
  out += "Use " + ontology.fallback_label() + " when no other label applies.\n";
  return out;
}

}  // namespace

TaskPrompt build_classification_prompt(const LabelOntology& ontology,
                                       std::span<const std::string> sentences) {
  if (sentences.empty()) throw Error(Errc::EmptyInput, "empty sentence batch");
  TaskPrompt p;
  p.kind = TaskKind::SentenceClassify;
  p.schema_id = "classify.v1";
  p.system =
      "You assign clinical note sentences to note sections. Choose exactly one label per "
      "sentence from the allowed labels, spelled exactly as listed.\n" +
      label_block(ontology);
  p.user =
      "Label every sentence. Reply with only a JSON array of records "
      "{\"index\": <integer>, \"label\": <string>}, one per sentence, in index order.\n\n";
  p.user += kSentencesIntro;
  p.user += json(std::vector<std::string>(sentences.begin(), sentences.end())).dump();
  p.user += "\n";
  return p;
}

TaskPrompt build_segmentation_prompt(const LabelOntology& ontology, const ClinicalNote& note) {
  if (tokenize(note.text).empty()) throw Error(Errc::EmptyInput, "note " + note.note_id + " is empty");
  TaskPrompt p;
  p.kind = TaskKind::FreetextSegment;
  p.schema_id = "segment.v1";
  p.system =
      "You split clinical notes into consecutive sections. Label each section with one of the "
      "allowed labels, spelled exactly as listed.\n" +
      label_block(ontology);
  p.user =
      "List the sections of the note below in document order. Reply with only a JSON array of "
      "records {\"label\": <string>, \"first_line\": <string>} where first_line is copied "
      "verbatim from the first line of the section.\n\n";
  p.user += kNoteBegin;
  p.user += note.text;
  p.user += kNoteEnd;
  p.user += "\n";
  return p;
}

std::vector<std::string> sentences_from_prompt(const TaskPrompt& prompt) {
  const auto pos = prompt.user.find(kSentencesIntro);
  if (pos == std::string::npos) return {};
  try {
    auto arr = json::parse(prompt.user.substr(pos + kSentencesIntro.size()));
    return arr.get<std::vector<std::string>>();
  } catch (const json::exception&) {
    return {};
  }
}

std::optional<std::string> note_from_prompt(const TaskPrompt& prompt) {
  const auto begin = prompt.user.find(kNoteBegin);
  const auto end = prompt.user.rfind(kNoteEnd);
  if (begin == std::string::npos || end == std::string::npos || end < begin + kNoteBegin.size())
    return std::nullopt;
  const auto start = begin + kNoteBegin.size();
  return prompt.user.substr(start, end - start);
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error(Errc::InvalidArgument, "sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string request_hash(const LlmEndpoint& endpoint, const TaskPrompt& prompt,
                         const DecodingParams& params) {
  std::string buf;
  auto field = [&](std::string_view s) {
    buf += std::to_string(s.size());
    buf.push_back(':');
    buf.append(s);
  };
  field(endpoint.name);
  field(endpoint.model);
  field(task_kind_name(prompt.kind));
  field(prompt.schema_id);
  field(prompt.system);
  field(prompt.user);
  field(json({{"temperature", params.temperature}, {"max_tokens", params.max_tokens}}).dump());
  return sha256_hex(buf);
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::optional<LlmTrace> ResponseCache::get(const std::string& hash) const {
  std::lock_guard lock(mu_);
  const auto path = dir_ / (hash + ".json");
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    json j = json::parse(in);
    LlmTrace t;
    t.request_hash = j.at("request_hash").get<std::string>();
    t.endpoint = j.at("endpoint").get<std::string>();
    t.response = j.at("response").get<std::string>();
    t.latency_ms = j.value("latency_ms", 0.0);
    t.retries = j.value("retries", std::size_t{0});
    if (t.request_hash != hash) return std::nullopt;
    t.cache_hit = true;
    return t;
  } catch (const json::exception&) {
    return std::nullopt;  // a torn entry is a miss
  }
}

void ResponseCache::put(const LlmTrace& trace) {
  json j = {{"request_hash", trace.request_hash},
            {"endpoint", trace.endpoint},
            {"response", trace.response},
            {"latency_ms", trace.latency_ms},
            {"retries", trace.retries}};
  std::lock_guard lock(mu_);
  const auto final_path = dir_ / (trace.request_hash + ".json");
  const auto tmp_path = dir_ / (trace.request_hash + ".json.tmp");
  write_file(tmp_path, j.dump(2) + "\n");
  std::filesystem::rename(tmp_path, final_path);
}

std::string HttpTransport::complete(const LlmEndpoint& endpoint, const TaskPrompt& prompt,
                                    const DecodingParams& params) {
  httplib::Client client(endpoint.base_url);
  client.set_connection_timeout(endpoint.timeout);
  client.set_read_timeout(endpoint.timeout);
  client.set_write_timeout(endpoint.timeout);
  httplib::Headers headers;
  if (!endpoint.auth_env.empty()) {
    const char* token = std::getenv(endpoint.auth_env.c_str());
    if (token && *token) headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  json body = {{"model", endpoint.model.empty() ? endpoint.name : endpoint.model},
               {"temperature", params.temperature},
               {"max_tokens", params.max_tokens},
               {"messages", json::array({{{"role", "system"}, {"content", prompt.system}},
                                         {{"role", "user"}, {"content", prompt.user}}})}};
  auto res = client.Post(endpoint.path, headers, body.dump(), "application/json");
  if (!res) throw TransportFailure("request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw TransportFailure("HTTP status " + std::to_string(res->status));
  try {
    auto j = json::parse(res->body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw TransportFailure(std::string("unexpected response body: ") + e.what());
  }
}

MockTransport::MockTransport(Script script, const LabelOntology& ontology)
    : script_(std::move(script)), matcher_(rules::compile_matcher(ontology, rules::options_for(rules::Method::Rules))) {
  if (script_.mode != "rules" && script_.mode != "garbage" && script_.mode != "canned")
    throw Error(Errc::InvalidArgument, "unknown mock mode '" + script_.mode + "'");
  if (script_.mode == "canned" && script_.responses.empty())
    throw Error(Errc::InvalidArgument, "canned mock needs responses");
}

MockTransport::Script MockTransport::parse_script(std::string_view json_text) {
  Script s;
  try {
    auto j = json::parse(json_text);
    s.mode = j.value("mode", s.mode);
    s.responses = j.value("responses", s.responses);
    s.garbage_text = j.value("garbage_text", s.garbage_text);
    s.fail_first = j.value("fail_first", s.fail_first);
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedRecord, std::string("mock script: ") + e.what());
  }
  return s;
}

MockTransport::Script MockTransport::load_script(const std::filesystem::path& path) {
  return parse_script(read_file(path));
}

std::size_t MockTransport::requests() const {
  std::lock_guard lock(mu_);
  return requests_;
}

std::string MockTransport::complete(const LlmEndpoint&, const TaskPrompt& prompt, const DecodingParams&) {
  std::size_t n = 0;
  {
    std::lock_guard lock(mu_);
    n = requests_++;
  }
  if (n < script_.fail_first) throw TransportFailure("scripted failure " + std::to_string(n + 1));
  if (script_.mode == "garbage") return script_.garbage_text;
  if (script_.mode == "canned") return script_.responses[(n - script_.fail_first) % script_.responses.size()];
  return prompt.kind == TaskKind::SentenceClassify ? answer_classification(prompt)
                                                   : answer_segmentation(prompt);
}

std::string MockTransport::answer_classification(const TaskPrompt& prompt) const {
  // Each header opens a section that continues until the next header.
  json out = json::array();
  std::string current = matcher_.ontology().fallback_label();
  const auto sentences = sentences_from_prompt(prompt);
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (auto m = matcher_.match_line(sentences[i])) current = m->label;
    out.push_back({{"index", i}, {"label", current}});
  }
  return out.dump();
}

std::string MockTransport::answer_segmentation(const TaskPrompt& prompt) const {
  auto text = note_from_prompt(prompt);
  if (!text) return script_.garbage_text;
  ClinicalNote note{"mock", *text, std::nullopt};
  auto seg = rules::segment_rules(matcher_, note, "mock");
  json out = json::array();
  for (const auto& span : seg.spans) {
    auto eol = note.text.find('\n', span.char_start);
    if (eol == std::string::npos) eol = note.text.size();
    out.push_back({{"label", span.label}, {"first_line", note.text.substr(span.char_start, eol - span.char_start)}});
  }
  return "```json\n" + out.dump(2) + "\n```";
}

LlmTrace call(const LlmEndpoint& endpoint, const TaskPrompt& prompt, ResponseCache* cache,
              Transport& transport, const DecodingParams& params) {
  const std::string hash = request_hash(endpoint, prompt, params);
  if (cache) {
    if (auto hit = cache->get(hash)) return *hit;
  }
  if (!endpoint.auth_env.empty()) {
    const char* token = std::getenv(endpoint.auth_env.c_str());
    if (!token || !*token) throw Error(Errc::AuthMissing, "set " + endpoint.auth_env + " for " + endpoint.name);
  }

  LlmTrace trace;
  trace.request_hash = hash;
  trace.endpoint = endpoint.name;
  auto delay = endpoint.backoff;
  for (std::size_t attempt = 0;; ++attempt) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      trace.response = transport.complete(endpoint, prompt, params);
      trace.latency_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      trace.retries = attempt;
      break;
    } catch (const TransportFailure& e) {
      if (attempt >= endpoint.max_retries)
        throw Error(Errc::TransportError, endpoint.name + " failed after " + std::to_string(attempt + 1) +
                                              " attempts: " + e.what());
      if (delay.count() > 0) std::this_thread::sleep_for(delay);
      delay *= 2;
    }
  }
  if (cache) cache->put(trace);
  return trace;
}

LlmRunner::LlmRunner(LlmEndpoint endpoint, Transport& transport, ResponseCache* cache, DecodingParams params)
    : endpoint_(std::move(endpoint)),
      transport_(transport),
      cache_(cache),
      params_(params) {
  endpoint_.validate();
  slots_ = std::make_shared<std::counting_semaphore<1024>>(static_cast<std::ptrdiff_t>(endpoint_.max_parallel));
}

LlmTrace LlmRunner::run(const TaskPrompt& prompt) {
  slots_->acquire();
  try {
    auto trace = call(endpoint_, prompt, cache_, transport_, params_);
    slots_->release();
    return trace;
  } catch (...) {
    slots_->release();
    throw;
  }
}

namespace {

// First JSON array embedded in free text (code fences, prose around it).
std::optional<json> extract_array(std::string_view text) {
  const auto last = text.rfind(']');
  if (last == std::string_view::npos) return std::nullopt;
  for (auto pos = text.find('['); pos != std::string_view::npos && pos < last; pos = text.find('[', pos + 1)) {
    for (auto end = last; end != std::string_view::npos && end > pos; end = text.rfind(']', end - 1)) {
      try {
        auto j = json::parse(text.substr(pos, end - pos + 1));
        if (j.is_array()) return j;
      } catch (const json::exception&) {
      }
      if (end == 0) break;
    }
  }
  return std::nullopt;
}

}  // namespace

ClassificationParse parse_classification(std::string_view response, std::size_t batch_size,
                                         const LabelOntology& ontology) {
  ClassificationParse out;
  out.labels.assign(batch_size, ontology.fallback_label());
  auto arr = extract_array(response);
  if (!arr) {
    out.status = ParseStatus::Failed;
    return out;
  }
  bool partial = arr->size() != batch_size;
  std::vector<bool> filled(batch_size, false);
  std::size_t sequential = 0;
  for (const auto& rec : *arr) {
    std::optional<std::string> raw;
    std::optional<long long> index;
    if (rec.is_string()) {
      raw = rec.get<std::string>();
    } else if (rec.is_object()) {
      if (auto it = rec.find("label"); it != rec.end() && it->is_string()) raw = it->get<std::string>();
      if (auto it = rec.find("index"); it != rec.end() && it->is_number_integer()) index = it->get<long long>();
    }
    const long long slot = index.value_or(static_cast<long long>(sequential));
    ++sequential;
    if (!raw || slot < 0 || static_cast<std::size_t>(slot) >= batch_size || filled[static_cast<std::size_t>(slot)]) {
      partial = true;
      continue;
    }
    filled[static_cast<std::size_t>(slot)] = true;
    if (auto canonical = ontology.canonicalize(*raw)) {
      out.labels[static_cast<std::size_t>(slot)] = *canonical;
    } else {
      partial = true;
    }
  }
  for (bool f : filled) partial = partial || !f;
  out.status = partial ? ParseStatus::Partial : ParseStatus::Ok;
  return out;
}

SegmentationParse parse_segmentation(std::string_view response, const ClinicalNote& note,
                                     const LabelOntology& ontology, std::string method) {
  SegmentationParse out;
  out.result.note_id = note.note_id;
  out.result.method = std::move(method);
  const auto tokens = tokenize(note.text);
  if (tokens.empty()) {
    out.status = ParseStatus::Failed;
    return out;
  }

  std::vector<std::pair<std::size_t, std::string>> starts;
  bool partial = false;
  auto arr = extract_array(response);
  if (arr) {
    std::size_t cursor = 0;
    for (const auto& rec : *arr) {
      if (!rec.is_object()) {
        partial = true;
        continue;
      }
      auto label_it = rec.find("label");
      auto line_it = rec.find("first_line");
      if (line_it == rec.end() || !line_it->is_string()) {
        partial = true;
        continue;
      }
      std::string anchor = line_it->get<std::string>();
      const auto first = anchor.find_first_not_of(" \t\r\n\v\f");
      const auto last = anchor.find_last_not_of(" \t\r\n\v\f");
      if (first == std::string::npos) {
        partial = true;
        continue;
      }
      anchor = anchor.substr(first, last - first + 1);
      const auto pos = note.text.find(anchor, cursor);
      if (pos == std::string::npos) {
        partial = true;
        continue;
      }
      const std::size_t tok = span_for_char(tokens, note.text.size(), pos);
      if (!starts.empty() && tok <= starts.back().first) {
        partial = true;
        continue;
      }
      std::optional<std::string> label;
      if (label_it != rec.end() && label_it->is_string()) label = ontology.canonicalize(label_it->get<std::string>());
      if (!label) partial = true;
      starts.emplace_back(tok, label.value_or(ontology.fallback_label()));
      cursor = pos + anchor.size();
    }
  }

  if (starts.empty()) {
    out.status = ParseStatus::Failed;
  } else {
    out.status = partial ? ParseStatus::Partial : ParseStatus::Ok;
  }
  if (starts.empty() || starts.front().first != 0)
    starts.insert(starts.begin(), {0, ontology.fallback_label()});
  for (std::size_t i = 0; i < starts.size(); ++i) {
    SectionSpan span;
    span.label = starts[i].second;
    span.token_start = starts[i].first;
    span.token_end = i + 1 < starts.size() ? starts[i + 1].first : tokens.size();
    span.char_start = tokens[span.token_start].char_start;
    span.char_end = tokens[span.token_end - 1].char_end;
    out.result.spans.push_back(std::move(span));
  }
  return out;
}

}  // namespace cnseg::llm
