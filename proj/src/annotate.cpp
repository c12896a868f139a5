#include "cnseg/annotate.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <httplib.h>

#include "cnseg/error.hpp"

namespace cnseg::annotate {

json record_to_json(const AnnotationRecord& r) {
  return json{{"sentence_id", r.sentence_id}, {"annotator_id", r.annotator_id}, {"label", r.label},
              {"timestamp", r.timestamp_ms}};
}

AnnotationRecord record_from_json(const json& j, std::size_t line_no) {
  if (!j.is_object()) throw Error(Errc::MalformedRecord, "annotation record must be an object", line_no);
  AnnotationRecord r;
  r.sentence_id = require_string(j, "sentence_id", line_no);
  r.annotator_id = require_string(j, "annotator_id", line_no);
  r.label = require_string(j, "label", line_no);
  if (j.contains("timestamp")) {
    if (!j["timestamp"].is_number_integer()) throw Error(Errc::MalformedRecord, "timestamp must be an integer", line_no);
    r.timestamp_ms = j["timestamp"].get<std::int64_t>();
  }
  return r;
}

AnnotationIndex fold_log(const std::vector<AnnotationRecord>& log) {
  AnnotationIndex index;
  for (const auto& r : log) {
    auto [it, inserted] = index.try_emplace({r.sentence_id, r.annotator_id}, r);
    if (!inserted && r.timestamp_ms >= it->second.timestamp_ms) it->second = r;
  }
  return index;
}

std::vector<AnnotationRecord> AnnotationStore::replay(const std::filesystem::path& path, std::size_t* good_bytes,
                                                      std::size_t* torn) {
  std::vector<AnnotationRecord> log;
  std::size_t good = 0, dropped = 0;
  if (std::filesystem::exists(path)) {
    const std::string data = read_file(path);
    std::size_t pos = 0, line_no = 0;
    while (pos < data.size()) {
      ++line_no;
      const std::size_t nl = data.find('\n', pos);
      const bool complete = nl != std::string::npos;
      const std::string line = data.substr(pos, complete ? nl - pos : std::string::npos);
      const std::size_t next = complete ? nl + 1 : data.size();
      if (line.find_first_not_of(" \t\r") == std::string::npos) {
        if (complete) good = next;
        pos = next;
        continue;
      }
      try {
        log.push_back(record_from_json(json::parse(line), line_no));
        if (!complete) {
          // A parseable record without its newline is still torn: the ack
          // is only sent after the full line is synced.
          log.pop_back();
          ++dropped;
          break;
        }
        good = next;
      } catch (const std::exception& e) {
        if (!complete) {
          ++dropped;
          break;
        }
        throw Error(Errc::MalformedRecord, std::string("annotation log: ") + e.what(), line_no);
      }
      pos = next;
    }
  }
  if (good_bytes) *good_bytes = good;
  if (torn) *torn = dropped;
  return log;
}

AnnotationStore::AnnotationStore(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::size_t good = 0;
  log_ = replay(path_, &good, &torn_);
  fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) throw Error(Errc::IoError, "cannot open " + path_.string() + ": " + std::strerror(errno));
  if (torn_ > 0 && ::ftruncate(fd_, static_cast<off_t>(good)) != 0)
    throw Error(Errc::IoError, "cannot truncate torn tail of " + path_.string());
  index_ = std::make_shared<const AnnotationIndex>(fold_log(log_));
}

AnnotationStore::~AnnotationStore() {
  if (fd_ >= 0) ::close(fd_);
}

void AnnotationStore::append(const AnnotationRecord& record) {
  const std::string line = record_to_json(record).dump() + "\n";
  std::lock_guard writer(write_mu_);
  std::size_t done = 0;
  while (done < line.size()) {
    const ssize_t n = ::write(fd_, line.data() + done, line.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::IoError, "append failed: " + std::string(std::strerror(errno)));
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fsync(fd_) != 0) throw Error(Errc::IoError, "fsync failed: " + std::string(std::strerror(errno)));

  auto next = std::make_shared<AnnotationIndex>(*snapshot());
  auto [it, inserted] = next->try_emplace({record.sentence_id, record.annotator_id}, record);
  if (!inserted && record.timestamp_ms >= it->second.timestamp_ms) it->second = record;
  std::unique_lock lock(read_mu_);
  log_.push_back(record);
  index_ = std::move(next);
}

std::size_t AnnotationStore::size() const {
  std::shared_lock lock(read_mu_);
  return log_.size();
}

std::vector<AnnotationRecord> AnnotationStore::log() const {
  std::shared_lock lock(read_mu_);
  return log_;
}

std::shared_ptr<const AnnotationIndex> AnnotationStore::snapshot() const {
  std::shared_lock lock(read_mu_);
  return index_;
}

json to_json(const SystemAgreement& a) {
  return json{{"system", a.system},
              {"kappa", a.report.kappa},
              {"percent_agreement", 100.0 * a.report.percent_agreement},
              {"expected_agreement", a.report.expected_agreement},
              {"n", a.report.n},
              {"majority_ties", a.majority_ties}};
}

namespace {

json row_to_json(const DistributionRow& r) {
  return json{{"label", r.label},
              {"human", r.human},
              {"human_majority", r.human_majority},
              {"majority_ties", r.majority_ties},
              {"systems", r.systems}};
}

}  // namespace

json to_json(const DistributionTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) rows.push_back(row_to_json(r));
  return json{{"subset", t.subset},
              {"sentences", t.sentences},
              {"systems", t.systems},
              {"rows", rows},
              {"totals", row_to_json(t.totals)},
              {"fallback_rate_subset", t.fallback_rate_subset},
              {"fallback_rate_all", t.fallback_rate_all}};
}

std::int64_t AnnotationService::system_clock_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

AnnotationService::AnnotationService(std::shared_ptr<AnnotationStore> store, LabelOntology ontology, Clock clock)
    : store_(std::move(store)), ontology_(std::move(ontology)), clock_(std::move(clock)) {
  if (!store_) throw Error(Errc::InvalidArgument, "annotation service needs a store");
}

void AnnotationService::load_corpus(SentenceCorpus corpus) {
  std::unique_lock lock(mu_);
  sentence_order_.clear();
  for (std::size_t i = 0; i < corpus.sentences().size(); ++i) sentence_order_[corpus.sentences()[i].sentence_id] = i;
  corpus_.emplace(std::move(corpus));
}

bool AnnotationService::has_corpus() const {
  std::shared_lock lock(mu_);
  return corpus_.has_value();
}

void AnnotationService::set_predictions(const std::string& system, std::map<std::string, std::string> labels) {
  for (auto& [id, label] : labels)
    if (!ontology_.contains(label)) label = ontology_.fallback_label();
  std::unique_lock lock(mu_);
  predictions_[system] = std::move(labels);
}

void AnnotationService::set_subset(const std::string& name, std::vector<std::string> sentence_ids) {
  std::unique_lock lock(mu_);
  subsets_[name] = std::move(sentence_ids);
}

std::vector<std::string> AnnotationService::systems() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> out;
  for (const auto& [name, p] : predictions_) out.push_back(name);
  return out;
}

std::vector<std::string> AnnotationService::subsets() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> out = {"all"};
  for (const auto& [name, ids] : subsets_)
    if (name != "all") out.push_back(name);
  return out;
}

std::optional<LabeledSentence> AnnotationService::next_task(const std::string& annotator_id) const {
  std::shared_lock lock(mu_);
  if (!corpus_) throw Error(Errc::UnknownCorpus, "no task corpus loaded");
  const auto index = store_->snapshot();
  for (const auto& s : corpus_->sentences())
    if (!index->count({s.sentence_id, annotator_id})) return s;
  return std::nullopt;
}

AnnotationRecord AnnotationService::submit_label(const std::string& sentence_id, const std::string& annotator_id,
                                                 const std::string& label) {
  if (!ontology_.contains(label)) throw Error(Errc::InvalidLabel, "label not in ontology: " + label);
  if (annotator_id.empty()) throw Error(Errc::InvalidArgument, "annotator_id is empty");
  {
    std::shared_lock lock(mu_);
    if (!corpus_) throw Error(Errc::UnknownCorpus, "no task corpus loaded");
    if (!sentence_order_.count(sentence_id)) throw Error(Errc::UnknownSentence, "unknown sentence " + sentence_id);
  }
  AnnotationRecord r{sentence_id, annotator_id, label, clock_()};
  store_->append(r);
  return r;
}

std::map<std::string, metrics::MajorityLabel> AnnotationService::majorities(const AnnotationIndex& index) const {
  std::map<std::string, std::vector<AnnotationRecord>> by_sentence;
  for (const auto& [key, r] : index) by_sentence[key.first].push_back(r);
  std::map<std::string, metrics::MajorityLabel> out;
  for (const auto& [id, records] : by_sentence) out[id] = metrics::majority_label(records);
  return out;
}

SystemAgreement AnnotationService::agreement_report(const std::string& system) const {
  std::shared_lock lock(mu_);
  auto pit = predictions_.find(system);
  if (pit == predictions_.end()) throw Error(Errc::InvalidArgument, "no predictions for system " + system);
  const auto majority = majorities(*store_->snapshot());
  std::vector<std::string> human, predicted;
  SystemAgreement out;
  out.system = system;
  for (const auto& [id, m] : majority) {
    auto it = pit->second.find(id);
    if (it == pit->second.end()) continue;
    human.push_back(m.label);
    predicted.push_back(it->second);
    if (m.tie) ++out.majority_ties;
  }
  if (human.empty()) throw Error(Errc::NoOverlap, "no annotated sentence overlaps predictions of " + system);
  out.report = metrics::cohen_kappa(human, predicted);
  return out;
}

std::vector<std::string> AnnotationService::subset_ids(const std::string& subset) const {
  if (subset == "all" && !subsets_.count("all")) {
    std::vector<std::string> ids;
    for (const auto& s : corpus_->sentences()) ids.push_back(s.sentence_id);
    return ids;
  }
  auto it = subsets_.find(subset);
  if (it == subsets_.end()) throw Error(Errc::InvalidArgument, "unknown subset " + subset);
  return it->second;
}

DistributionTable AnnotationService::distribution(const std::string& subset) const {
  std::shared_lock lock(mu_);
  if (!corpus_) throw Error(Errc::UnknownCorpus, "no task corpus loaded");
  const auto index = store_->snapshot();
  const auto majority = majorities(*index);

  std::map<std::string, std::vector<const AnnotationRecord*>> records;
  for (const auto& [key, r] : *index) records[key.first].push_back(&r);

  auto tabulate = [&](const std::vector<std::string>& ids) {
    std::map<std::string, DistributionRow> rows;
    DistributionRow totals;
    totals.label = "TOTAL";
    for (const auto& id : std::set<std::string>(ids.begin(), ids.end())) {
      if (!sentence_order_.count(id)) throw Error(Errc::UnknownSentence, "subset names unknown sentence " + id);
      if (auto it = records.find(id); it != records.end()) {
        for (const auto* r : it->second) {
          ++rows[r->label].human;
          ++totals.human;
        }
      }
      if (auto it = majority.find(id); it != majority.end()) {
        auto& row = rows[it->second.label];
        ++row.human_majority;
        ++totals.human_majority;
        if (it->second.tie) {
          ++row.majority_ties;
          ++totals.majority_ties;
        }
      }
      for (const auto& [system, preds] : predictions_) {
        if (auto it = preds.find(id); it != preds.end()) {
          ++rows[it->second].systems[system];
          ++totals.systems[system];
        }
      }
    }
    return std::pair{std::move(rows), std::move(totals)};
  };

  auto fallback_rates = [&](const std::map<std::string, DistributionRow>& rows, const DistributionRow& totals) {
    std::map<std::string, double> rates;
    auto rate = [](std::size_t num, std::size_t den) { return den == 0 ? 0.0 : static_cast<double>(num) / den; };
    const auto it = rows.find(ontology_.fallback_label());
    const DistributionRow empty;
    const DistributionRow& fb = it == rows.end() ? empty : it->second;
    rates["human"] = rate(fb.human, totals.human);
    rates["human_majority"] = rate(fb.human_majority, totals.human_majority);
    for (const auto& [system, preds] : predictions_) {
      auto s = fb.systems.find(system);
      auto t = totals.systems.find(system);
      rates[system] = rate(s == fb.systems.end() ? 0 : s->second, t == totals.systems.end() ? 0 : t->second);
    }
    return rates;
  };

  const auto ids = subset_ids(subset);
  auto [rows, totals] = tabulate(ids);
  DistributionTable table;
  table.subset = subset;
  table.sentences = std::set<std::string>(ids.begin(), ids.end()).size();
  for (const auto& [system, preds] : predictions_) table.systems.push_back(system);
  for (const auto& label : ontology_.labels()) {
    auto it = rows.find(label);
    if (it == rows.end()) continue;
    it->second.label = label;
    for (const auto& system : table.systems) it->second.systems.try_emplace(system, 0);
    table.rows.push_back(it->second);
  }
  for (const auto& system : table.systems) totals.systems.try_emplace(system, 0);
  table.fallback_rate_subset = fallback_rates(rows, totals);
  std::vector<std::string> all;
  for (const auto& s : corpus_->sentences()) all.push_back(s.sentence_id);
  auto [all_rows, all_totals] = tabulate(all);
  table.fallback_rate_all = fallback_rates(all_rows, all_totals);
  table.totals = std::move(totals);
  return table;
}

std::map<std::string, std::string> load_predictions(const std::filesystem::path& path) {
  std::map<std::string, std::string> out;
  for_each_jsonl(path, [&](const json& j, std::size_t line_no) {
    out[require_string(j, "sentence_id", line_no)] = require_string(j, "label", line_no);
  });
  return out;
}

std::vector<std::string> load_subset(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t\r");
    ids.push_back(line.substr(b, e - b + 1));
  }
  return ids;
}

namespace {

int status_for(Errc code) {
  switch (code) {
    case Errc::UnknownSentence:
      return 404;
    case Errc::UnknownCorpus:
    case Errc::NoOverlap:
      return 409;
    case Errc::IoError:
      return 500;
    default:
      return 400;
  }
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <class Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    reply(res, status_for(e.code()), json{{"error", errc_name(e.code())}, {"message", e.what()}});
  } catch (const json::exception& e) {
    reply(res, 400, json{{"error", "MalformedRecord"}, {"message", e.what()}});
  }
}

}  // namespace

AnnotationServer::AnnotationServer(AnnotationService& service, std::optional<std::filesystem::path> static_dir)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto& svc = service_;
  server_->Get("/api/next", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string annotator = req.get_param_value("annotator");
      if (annotator.empty()) throw Error(Errc::InvalidArgument, "annotator parameter is required");
      auto task = svc.next_task(annotator);
      if (!task) return reply(res, 200, json{{"done", true}});
      reply(res, 200, json{{"sentence_id", task->sentence_id}, {"text", task->text},
                           {"labels", svc.ontology().labels()}, {"done", false}});
    });
  });
  server_->Post("/api/label", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = json::parse(req.body);
      const auto r = record_from_json(body);
      const auto stored = svc.submit_label(r.sentence_id, r.annotator_id, r.label);
      reply(res, 200, json{{"ok", true}, {"record", record_to_json(stored)}, {"store_size", svc.store().size()}});
    });
  });
  server_->Get("/api/agreement", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      if (req.has_param("system")) return reply(res, 200, to_json(svc.agreement_report(req.get_param_value("system"))));
      json all = json::array();
      for (const auto& system : svc.systems()) {
        try {
          all.push_back(to_json(svc.agreement_report(system)));
        } catch (const Error& e) {
          if (e.code() != Errc::NoOverlap) throw;
          all.push_back(json{{"system", system}, {"n", 0}});
        }
      }
      reply(res, 200, json{{"systems", all}});
    });
  });
  server_->Get("/api/distribution", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string subset = req.has_param("subset") ? req.get_param_value("subset") : "all";
      reply(res, 200, to_json(svc.distribution(subset)));
    });
  });
  server_->Get("/api/export", [&svc](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      json records = json::array();
      for (const auto& r : svc.store().log()) records.push_back(record_to_json(r));
      reply(res, 200, json{{"records", records}});
    });
  });
  if (static_dir && !server_->set_mount_point("/", static_dir->string()))
    throw Error(Errc::IoError, "static directory not found: " + static_dir->string());
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = server_->bind_to_any_port(host);
  } else if (!server_->bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error(Errc::IoError, "cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void AnnotationServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

void AnnotationServer::wait() {
  if (thread_.joinable()) thread_.join();
}

}  // namespace cnseg::annotate
