#pragma once
// Human annotation collection: durable append-only store, task dispatch,
// agreement against system predictions, and the HTTP front.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "cnseg/core.hpp"
#include "cnseg/corpus.hpp"
#include "cnseg/jsonl.hpp"
#include "cnseg/metrics.hpp"

namespace httplib {
class Server;
}

namespace cnseg::annotate {

// (sentence_id, annotator_id) -> winning record
using AnnotationIndex = std::map<std::pair<std::string, std::string>, AnnotationRecord>;

json record_to_json(const AnnotationRecord& record);
AnnotationRecord record_from_json(const json& j, std::size_t line_no = 0);

// Last write wins: the later timestamp, then the later log position.
AnnotationIndex fold_log(const std::vector<AnnotationRecord>& log);

// One JSON record per line. Appends are serialized and fsync'd before
// returning. A torn final line (crash mid-write) is dropped on replay and
// truncated away so later appends stay well formed.
class AnnotationStore {
 public:
  explicit AnnotationStore(std::filesystem::path path);
  ~AnnotationStore();
  AnnotationStore(const AnnotationStore&) = delete;
  AnnotationStore& operator=(const AnnotationStore&) = delete;

  void append(const AnnotationRecord& record);
  std::size_t size() const;
  std::vector<AnnotationRecord> log() const;
  std::shared_ptr<const AnnotationIndex> snapshot() const;
  const std::filesystem::path& path() const { return path_; }
  std::size_t dropped_torn_lines() const { return torn_; }

  static std::vector<AnnotationRecord> replay(const std::filesystem::path& path, std::size_t* good_bytes = nullptr,
                                              std::size_t* torn = nullptr);

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  std::size_t torn_ = 0;
  mutable std::mutex write_mu_;
  mutable std::shared_mutex read_mu_;
  std::vector<AnnotationRecord> log_;
  std::shared_ptr<const AnnotationIndex> index_;
};

struct SystemAgreement {
  std::string system;
  metrics::AgreementReport report;  // report.n is the overlap size
  std::size_t majority_ties = 0;
};

struct DistributionRow {
  std::string label;
  std::size_t human = 0;           // every record
  std::size_t human_majority = 0;  // one per sentence
  std::size_t majority_ties = 0;   // of human_majority, decided by tie-break
  std::map<std::string, std::size_t> systems;
};

struct DistributionTable {
  std::string subset;
  std::size_t sentences = 0;
  std::vector<std::string> systems;
  std::vector<DistributionRow> rows;  // ontology order, non-zero rows only
  DistributionRow totals;
  // Share of each column assigned the fallback label, within the subset and
  // over the whole corpus.
  std::map<std::string, double> fallback_rate_subset;
  std::map<std::string, double> fallback_rate_all;
};

json to_json(const SystemAgreement& a);
json to_json(const DistributionTable& t);

class AnnotationService {
 public:
  using Clock = std::function<std::int64_t()>;
  static std::int64_t system_clock_ms();

  AnnotationService(std::shared_ptr<AnnotationStore> store, LabelOntology ontology, Clock clock = system_clock_ms);

  void load_corpus(SentenceCorpus corpus);
  bool has_corpus() const;
  // sentence_id -> label; unknown labels map to the fallback.
  void set_predictions(const std::string& system, std::map<std::string, std::string> labels);
  void set_subset(const std::string& name, std::vector<std::string> sentence_ids);
  std::vector<std::string> systems() const;
  std::vector<std::string> subsets() const;

  // nullopt when the annotator has labeled every sentence.
  std::optional<LabeledSentence> next_task(const std::string& annotator_id) const;
  AnnotationRecord submit_label(const std::string& sentence_id, const std::string& annotator_id,
                                const std::string& label);
  SystemAgreement agreement_report(const std::string& system) const;
  DistributionTable distribution(const std::string& subset) const;

  const LabelOntology& ontology() const { return ontology_; }
  AnnotationStore& store() { return *store_; }

 private:
  std::vector<std::string> subset_ids(const std::string& subset) const;
  std::map<std::string, metrics::MajorityLabel> majorities(const AnnotationIndex& index) const;

  std::shared_ptr<AnnotationStore> store_;
  LabelOntology ontology_;
  Clock clock_;
  mutable std::shared_mutex mu_;
  std::optional<SentenceCorpus> corpus_;
  std::map<std::string, std::size_t> sentence_order_;
  std::map<std::string, std::map<std::string, std::string>> predictions_;
  std::map<std::string, std::vector<std::string>> subsets_;
};

// Reads {"sentence_id", "label"} records.
std::map<std::string, std::string> load_predictions(const std::filesystem::path& path);
// One sentence id per line; blank lines and '#' comments skipped.
std::vector<std::string> load_subset(const std::filesystem::path& path);

class AnnotationServer {
 public:
  explicit AnnotationServer(AnnotationService& service, std::optional<std::filesystem::path> static_dir = {});
  ~AnnotationServer();

  // port 0 picks a free port. Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();
  // Blocks until stop() is called from elsewhere.
  void wait();

 private:
  AnnotationService& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace cnseg::annotate
