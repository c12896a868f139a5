#pragma once
// Model-agnostic LLM bridge: prompt construction, cached transport with
// retries, a scripted mock, and tolerant response parsing.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cnseg/core.hpp"
#include "cnseg/rules.hpp"

namespace cnseg::llm {

struct LlmEndpoint {
  std::string name;
  std::string base_url;                         // e.g. https://api.openai.com
  std::string path = "/v1/chat/completions";    // OpenAI-compatible chat route
  std::string model;                            // defaults to name when empty
  std::string auth_env;                         // env var holding the bearer token; empty = no auth
  std::chrono::seconds timeout{60};
  std::size_t max_retries = 3;
  std::size_t max_parallel = 4;
  std::chrono::milliseconds backoff{500};       // doubled after every failed attempt

  void validate() const;
};

enum class TaskKind { SentenceClassify, FreetextSegment };
std::string_view task_kind_name(TaskKind kind);

struct TaskPrompt {
  TaskKind kind = TaskKind::SentenceClassify;
  std::string system;
  std::string user;
  std::string schema_id;
};

struct DecodingParams {
  double temperature = 0.0;
  std::size_t max_tokens = 4096;
};

enum class ParseStatus { Unparsed, Ok, Partial, Failed };
std::string_view parse_status_name(ParseStatus status);

struct LlmTrace {
  std::string request_hash;
  std::string endpoint;
  std::string response;
  ParseStatus status = ParseStatus::Unparsed;
  double latency_ms = 0.0;
  std::size_t retries = 0;
  bool cache_hit = false;
};

TaskPrompt build_classification_prompt(const LabelOntology& ontology,
                                       std::span<const std::string> sentences);
TaskPrompt build_segmentation_prompt(const LabelOntology& ontology, const ClinicalNote& note);

std::string sha256_hex(std::string_view data);
// Content hash over length-prefixed (endpoint, model, prompt, params) fields.
std::string request_hash(const LlmEndpoint& endpoint, const TaskPrompt& prompt,
                         const DecodingParams& params);

// Content-addressed trace store: <dir>/<request_hash>.json.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);
  std::optional<LlmTrace> get(const std::string& hash) const;
  void put(const LlmTrace& trace);
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  mutable std::mutex mu_;
};

// Transient failures; call() retries these.
class TransportFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::string complete(const LlmEndpoint& endpoint, const TaskPrompt& prompt,
                               const DecodingParams& params) = 0;
};

// POSTs an OpenAI-compatible chat completion request.
class HttpTransport : public Transport {
 public:
  std::string complete(const LlmEndpoint& endpoint, const TaskPrompt& prompt,
                       const DecodingParams& params) override;
};

// Deterministic stand-in for an endpoint, driven by a JSON script:
//   {"mode": "rules" | "garbage" | "canned",
//    "responses": [...], "garbage_text": "...", "fail_first": 0}
// "rules" answers from the header matcher, so results track the note text.
class MockTransport : public Transport {
 public:
  struct Script {
    std::string mode = "rules";
    std::vector<std::string> responses;
    std::string garbage_text = "I cannot help with that request.";
    std::size_t fail_first = 0;
  };

  MockTransport(Script script, const LabelOntology& ontology);
  static Script load_script(const std::filesystem::path& path);
  static Script parse_script(std::string_view json_text);

  std::string complete(const LlmEndpoint& endpoint, const TaskPrompt& prompt,
                       const DecodingParams& params) override;
  std::size_t requests() const;

 private:
  std::string answer_classification(const TaskPrompt& prompt) const;
  std::string answer_segmentation(const TaskPrompt& prompt) const;

  Script script_;
  rules::HeaderMatcher matcher_;
  mutable std::mutex mu_;
  std::size_t requests_ = 0;
};

// Cache-first request with bounded retries and exponential backoff. Throws
// AuthMissing when a cache miss needs a token that is not set, and
// TransportError once retries are exhausted.
LlmTrace call(const LlmEndpoint& endpoint, const TaskPrompt& prompt, ResponseCache* cache,
              Transport& transport, const DecodingParams& params = {});

// Bounds in-flight transport calls for one endpoint.
class LlmRunner {
 public:
  LlmRunner(LlmEndpoint endpoint, Transport& transport, ResponseCache* cache,
            DecodingParams params = {});
  LlmTrace run(const TaskPrompt& prompt);
  const LlmEndpoint& endpoint() const { return endpoint_; }

 private:
  LlmEndpoint endpoint_;
  Transport& transport_;
  ResponseCache* cache_;
  DecodingParams params_;
  std::shared_ptr<std::counting_semaphore<1024>> slots_;
};

struct ClassificationParse {
  std::vector<std::string> labels;
  ParseStatus status = ParseStatus::Failed;
};

ClassificationParse parse_classification(std::string_view response, std::size_t batch_size,
                                         const LabelOntology& ontology);

struct SegmentationParse {
  SegmentationResult result;
  ParseStatus status = ParseStatus::Failed;
};

SegmentationParse parse_segmentation(std::string_view response, const ClinicalNote& note,
                                     const LabelOntology& ontology, std::string method = "llm");

// Prompt inputs recovered from prompt text; the mock relies on these.
std::vector<std::string> sentences_from_prompt(const TaskPrompt& prompt);
std::optional<std::string> note_from_prompt(const TaskPrompt& prompt);

}  // namespace cnseg::llm
