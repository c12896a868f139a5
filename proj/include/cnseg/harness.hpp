#pragma once
// Experiment orchestration: methods x tasks x fold runs, aggregate tables,
// and report emission.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cnseg/corpus.hpp"
#include "cnseg/jsonl.hpp"
#include "cnseg/llm.hpp"
#include "cnseg/logreg.hpp"
#include "cnseg/metrics.hpp"
#include "cnseg/rules.hpp"

namespace cnseg::harness {

enum class Task { Sentences, Freetext };
std::string_view task_name(Task task);

// {name, base_url, path?, model, auth_env?, timeout_s?, max_retries?,
// max_parallel?, backoff_ms?}
llm::LlmEndpoint endpoint_from_json(const json& e);

struct ExperimentConfig {
  std::filesystem::path sentences;
  std::optional<std::filesystem::path> freetext;
  std::optional<std::filesystem::path> ontology;
  // rules | regex | logreg | mock | gold | llm:<endpoint name>
  std::vector<std::string> methods;
  std::vector<Task> tasks = {Task::Sentences, Task::Freetext};
  std::size_t k = 10;
  std::uint64_t seed = 13;
  std::optional<std::size_t> max_folds;  // run only the first n fold runs
  std::filesystem::path out_dir = "out";
  std::optional<std::filesystem::path> cache_dir;
  std::optional<std::filesystem::path> mock_script;
  std::vector<llm::LlmEndpoint> endpoints;
  logreg::TrainConfig train;
  std::size_t min_count = 50;
  LabelMode label_mode = LabelMode::Lenient;

  // Relative paths resolve against the config file's directory.
  static ExperimentConfig load(const std::filesystem::path& path);
  static ExperimentConfig parse(std::string_view json_text, const std::filesystem::path& base_dir);
  void validate() const;
};

struct TaskScores {
  double precision = 0.0;  // 0-100
  double recall = 0.0;
  double f1 = 0.0;
};

struct ResultRow {
  std::string method;
  std::optional<TaskScores> sentences;
  std::optional<TaskScores> freetext;
  std::optional<double> avg_f1;
  std::optional<double> parse_failure_rate;  // LLM methods only, 0-100
};

struct ResultsTable {
  std::vector<ResultRow> rows;

  // Avg F1 from the one-decimal task F1 cells, as displayed.
  void fill_avg_f1();
  // Throws InvalidArgument when a row's Avg F1 disagrees with its task cells.
  void check_invariants() const;
};

enum class Column { SentP, SentR, SentF1, FreeP, FreeR, FreeF1, AvgF1 };
inline constexpr Column kScoreColumns[] = {Column::SentP, Column::SentR,  Column::SentF1, Column::FreeP,
                                           Column::FreeR, Column::FreeF1, Column::AvgF1};
std::string_view column_name(Column column);
std::optional<double> cell(const ResultRow& row, Column column);

enum class Mark { None, Best, Second };

// Marks per [row][column]. Ranking uses displayed (one-decimal) values; ties
// share a mark and the second mark goes to the next distinct value. Avg F1 is
// ranked only among rows that have every task present in the table.
std::vector<std::vector<Mark>> mark_best(const ResultsTable& table);

struct FoldRecord {
  std::string method;
  Task task = Task::Sentences;
  std::size_t fold = 0;
  std::size_t n = 0;  // sentences or notes scored
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  metrics::PRFScores boundary;                  // freetext counts
  std::vector<metrics::ClassScore> per_class;   // sentence counts
  std::size_t parse_ok = 0, parse_partial = 0, parse_failed = 0;
};

struct ExperimentResult {
  ResultsTable table;
  std::vector<FoldRecord> folds;
  TagStatistics stats;
  SplitPlan plan;
};

// Predictions for one method; implementations must be safe to call
// concurrently after fit().
class SegmentationMethod {
 public:
  virtual ~SegmentationMethod() = default;
  virtual std::string name() const = 0;
  virtual bool supports(Task task) const = 0;
  virtual void fit(const SentenceCorpus& /*train*/, const SentenceCorpus& /*validation*/) {}
  // One label per sentence of a single note.
  virtual std::vector<std::string> classify(std::span<const LabeledSentence> note_sentences) = 0;
  virtual SegmentationResult segment(const ClinicalNote& note) = 0;
  virtual std::size_t parallelism() const { return 1; }
  virtual bool reports_parse_status() const { return false; }
  struct ParseCounts {
    std::size_t ok = 0, partial = 0, failed = 0;
  };
  virtual ParseCounts take_parse_counts() { return {}; }
};

std::unique_ptr<SegmentationMethod> make_rules_method(rules::Method kind, const LabelOntology& ontology);
std::unique_ptr<SegmentationMethod> make_logreg_method(const LabelOntology& ontology,
                                                       const logreg::TrainConfig& config);
std::unique_ptr<SegmentationMethod> make_gold_method();
std::unique_ptr<SegmentationMethod> make_llm_method(std::string name, llm::LlmEndpoint endpoint,
                                                    std::shared_ptr<llm::Transport> transport,
                                                    std::shared_ptr<llm::ResponseCache> cache,
                                                    const LabelOntology& ontology);

// Labels each sentence with the span containing its first token when the
// sentences are joined into a freetext note.
std::vector<std::string> label_sentences_by_segmentation(std::span<const LabeledSentence> note_sentences,
                                                         const std::function<SegmentationResult(const ClinicalNote&)>& segment);

// Throws InvalidArgument if any test note also appears in train or validation.
void check_no_leakage(const FoldRun& run);

struct ExperimentInputs {
  SentenceCorpus sentences;
  FreetextCorpus freetext;
};

ExperimentInputs load_inputs(const ExperimentConfig& config);
std::vector<std::unique_ptr<SegmentationMethod>> build_methods(const ExperimentConfig& config,
                                                               const LabelOntology& ontology);

ExperimentResult run_experiment(const ExperimentConfig& config);
ExperimentResult run_experiment(const ExperimentConfig& config, const ExperimentInputs& inputs,
                                std::span<const std::unique_ptr<SegmentationMethod>> methods);

std::string format_results_tsv(const ResultsTable& table);
std::string format_results_text(const ResultsTable& table);
ResultsTable parse_results_tsv(std::string_view tsv);

struct AnovaAttempt {
  std::string grouping;  // "task" or "model"
  std::optional<metrics::AnovaResult> result;
  std::string note;      // why it could not be computed
};

// One-way ANOVA over the table's F1 cells grouped by task and by model.
std::vector<AnovaAttempt> anova_attempts(const ResultsTable& table);
std::string format_anova(std::span<const AnovaAttempt> attempts);

// Writes results.tsv, results.txt, radar.tsv, folds.jsonl, anova.txt, the
// appendix distribution files and manifest.json under `out_dir`. Returns the
// written file names.
std::vector<std::string> emit_reports(const ExperimentResult& result, const std::filesystem::path& out_dir,
                                      const ExperimentConfig* config = nullptr);

}  // namespace cnseg::harness
