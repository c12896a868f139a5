#include "cnseg/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "cnseg/error.hpp"
#include "cnseg/jsonl.hpp"
#include "cnseg/rules.hpp"

namespace cnseg::harness {

std::string_view task_name(Task task) { return task == Task::Sentences ? "sentences" : "freetext"; }

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::string fmt1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", metrics::round_half_up_1(v));
  return buf;
}

}  // namespace

llm::LlmEndpoint endpoint_from_json(const json& e) {
  llm::LlmEndpoint ep;
  ep.name = e.at("name").get<std::string>();
  ep.base_url = e.value("base_url", std::string());
  ep.path = e.value("path", ep.path);
  ep.model = e.value("model", std::string());
  ep.auth_env = e.value("auth_env", std::string());
  ep.timeout = std::chrono::seconds(e.value("timeout_s", 60));
  ep.max_retries = e.value("max_retries", ep.max_retries);
  ep.max_parallel = e.value("max_parallel", ep.max_parallel);
  ep.backoff = std::chrono::milliseconds(e.value("backoff_ms", 500));
  return ep;
}

ExperimentConfig ExperimentConfig::parse(std::string_view json_text, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedRecord, std::string("config: ") + e.what());
  }
  try {
    c.sentences = resolve(base_dir, j.at("sentences").get<std::string>());
    if (j.contains("freetext")) c.freetext = resolve(base_dir, j["freetext"].get<std::string>());
    if (j.contains("ontology")) c.ontology = resolve(base_dir, j["ontology"].get<std::string>());
    c.methods = j.at("methods").get<std::vector<std::string>>();
    const std::string tasks = j.value("tasks", std::string("both"));
    if (tasks == "both") {
      c.tasks = {Task::Sentences, Task::Freetext};
    } else if (tasks == "sentences") {
      c.tasks = {Task::Sentences};
    } else if (tasks == "freetext") {
      c.tasks = {Task::Freetext};
    } else {
      throw Error(Errc::InvalidArgument, "tasks must be sentences, freetext or both");
    }
    c.k = j.value("k", c.k);
    c.seed = j.value("seed", c.seed);
    if (j.contains("folds")) c.max_folds = j["folds"].get<std::size_t>();
    c.out_dir = resolve(base_dir, j.value("out", std::string("out")));
    if (j.contains("cache")) c.cache_dir = resolve(base_dir, j["cache"].get<std::string>());
    if (j.contains("mock_script")) c.mock_script = resolve(base_dir, j["mock_script"].get<std::string>());
    c.min_count = j.value("min_count", c.min_count);
    c.label_mode = j.value("strict_labels", false) ? LabelMode::Strict : LabelMode::Lenient;
    if (j.contains("logreg")) {
      const auto& t = j["logreg"];
      c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.l2_lambda = t.value("l2_lambda", c.train.l2_lambda);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.seed = t.value("seed", c.train.seed);
      c.train.min_count = t.value("min_count", c.train.min_count);
    }
    for (const auto& e : j.value("endpoints", json::array())) c.endpoints.push_back(endpoint_from_json(e));
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedRecord, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  return parse(read_file(path), path.has_parent_path() ? path.parent_path() : std::filesystem::path("."));
}

void ExperimentConfig::validate() const {
  if (methods.empty()) throw Error(Errc::InvalidArgument, "config lists no methods");
  if (tasks.empty()) throw Error(Errc::InvalidArgument, "config lists no tasks");
  std::set<std::string> seen;
  for (const auto& m : methods) {
    if (!seen.insert(m).second) throw Error(Errc::InvalidArgument, "method listed twice: " + m);
    if (m == "rules" || m == "regex" || m == "logreg" || m == "mock" || m == "gold") continue;
    if (m.rfind("llm:", 0) == 0) {
      const std::string name = m.substr(4);
      const bool known = std::any_of(endpoints.begin(), endpoints.end(),
                                     [&](const llm::LlmEndpoint& e) { return e.name == name; });
      if (!known) throw Error(Errc::InvalidArgument, "no endpoint named " + name);
      continue;
    }
    throw Error(Errc::InvalidArgument, "unknown method " + m);
  }
  for (const auto& e : endpoints) e.validate();
  if (k < 3) throw Error(Errc::InvalidArgument, "k must be at least 3");
  train.validate();
}

void ResultsTable::fill_avg_f1() {
  for (auto& row : rows) {
    std::optional<double> s, f;
    if (row.sentences) s = metrics::round_half_up_1(row.sentences->f1);
    if (row.freetext) f = metrics::round_half_up_1(row.freetext->f1);
    row.avg_f1 = metrics::avg_f1(s, f);
  }
}

void ResultsTable::check_invariants() const {
  for (const auto& row : rows) {
    std::optional<double> s, f;
    if (row.sentences) s = metrics::round_half_up_1(row.sentences->f1);
    if (row.freetext) f = metrics::round_half_up_1(row.freetext->f1);
    const auto expected = metrics::avg_f1(s, f);
    const bool ok = expected.has_value() == row.avg_f1.has_value() &&
                    (!expected || fmt1(*expected) == fmt1(*row.avg_f1));
    if (!ok) throw Error(Errc::InvalidArgument, "Avg F1 cell of " + row.method + " disagrees with its task F1 cells");
  }
}

std::string_view column_name(Column column) {
  switch (column) {
    case Column::SentP: return "sentences_precision";
    case Column::SentR: return "sentences_recall";
    case Column::SentF1: return "sentences_f1";
    case Column::FreeP: return "freetext_precision";
    case Column::FreeR: return "freetext_recall";
    case Column::FreeF1: return "freetext_f1";
    case Column::AvgF1: return "avg_f1";
  }
  return "";
}

std::optional<double> cell(const ResultRow& row, Column column) {
  switch (column) {
    case Column::SentP: return row.sentences ? std::optional(row.sentences->precision) : std::nullopt;
    case Column::SentR: return row.sentences ? std::optional(row.sentences->recall) : std::nullopt;
    case Column::SentF1: return row.sentences ? std::optional(row.sentences->f1) : std::nullopt;
    case Column::FreeP: return row.freetext ? std::optional(row.freetext->precision) : std::nullopt;
    case Column::FreeR: return row.freetext ? std::optional(row.freetext->recall) : std::nullopt;
    case Column::FreeF1: return row.freetext ? std::optional(row.freetext->f1) : std::nullopt;
    case Column::AvgF1: return row.avg_f1;
  }
  return std::nullopt;
}

std::vector<std::vector<Mark>> mark_best(const ResultsTable& table) {
  const std::size_t n_cols = std::size(kScoreColumns);
  std::vector<std::vector<Mark>> marks(table.rows.size(), std::vector<Mark>(n_cols, Mark::None));
  const bool any_sent = std::any_of(table.rows.begin(), table.rows.end(), [](auto& r) { return r.sentences.has_value(); });
  const bool any_free = std::any_of(table.rows.begin(), table.rows.end(), [](auto& r) { return r.freetext.has_value(); });

  for (std::size_t c = 0; c < n_cols; ++c) {
    const Column col = kScoreColumns[c];
    std::vector<std::pair<long long, std::size_t>> values;  // tenths, row
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      const auto& row = table.rows[r];
      if (col == Column::AvgF1) {
        const bool complete = (!any_sent || row.sentences) && (!any_free || row.freetext);
        if (!complete) continue;
      }
      if (auto v = cell(row, col)) values.emplace_back(std::llround(metrics::round_half_up_1(*v) * 10.0), r);
    }
    std::set<long long, std::greater<>> distinct;
    for (const auto& [v, r] : values) distinct.insert(v);
    if (distinct.empty()) continue;
    auto it = distinct.begin();
    const long long best = *it;
    const std::optional<long long> second = ++it != distinct.end() ? std::optional(*it) : std::nullopt;
    for (const auto& [v, r] : values) {
      if (v == best) {
        marks[r][c] = Mark::Best;
      } else if (second && v == *second) {
        marks[r][c] = Mark::Second;
      }
    }
  }
  return marks;
}

std::vector<std::string> label_sentences_by_segmentation(
    std::span<const LabeledSentence> note_sentences,
    const std::function<SegmentationResult(const ClinicalNote&)>& segment) {
  ClinicalNote note;
  note.note_id = note_sentences.empty() ? std::string() : note_sentences.front().note_id;
  std::vector<std::size_t> first_char;
  for (std::size_t i = 0; i < note_sentences.size(); ++i) {
    if (i) note.text.push_back(kSentenceJoiner);
    const auto& text = note_sentences[i].text;
    const auto lead = text.find_first_not_of(" \t\n\v\f\r");
    first_char.push_back(note.text.size() + (lead == std::string::npos ? 0 : lead));
    note.text += text;
  }
  std::vector<std::string> labels;
  if (note_sentences.empty()) return labels;
  const auto seg = segment(note);
  const auto tokens = tokenize(note.text);
  for (std::size_t off : first_char) {
    const std::size_t tok = span_for_char(tokens, note.text.size(), off);
    auto span = std::find_if(seg.spans.begin(), seg.spans.end(),
                             [&](const SectionSpan& s) { return tok >= s.token_start && tok < s.token_end; });
    labels.push_back(span == seg.spans.end() ? seg.spans.back().label : span->label);
  }
  return labels;
}

namespace {

class RulesMethod : public SegmentationMethod {
 public:
  RulesMethod(rules::Method kind, const LabelOntology& ontology)
      : kind_(kind), matcher_(rules::compile_matcher(ontology, rules::options_for(kind))) {}
  std::string name() const override { return std::string(rules::method_name(kind_)); }
  bool supports(Task) const override { return true; }
  std::vector<std::string> classify(std::span<const LabeledSentence> sentences) override {
    return label_sentences_by_segmentation(sentences, [&](const ClinicalNote& n) { return segment(n); });
  }
  SegmentationResult segment(const ClinicalNote& note) override {
    return rules::segment_rules(matcher_, note, name());
  }
  std::size_t parallelism() const override { return std::max(1u, std::thread::hardware_concurrency()); }

 private:
  rules::Method kind_;
  rules::HeaderMatcher matcher_;
};

class LogRegMethod : public SegmentationMethod {
 public:
  LogRegMethod(const LabelOntology& ontology, const logreg::TrainConfig& config)
      : ontology_(ontology), config_(config) {}
  std::string name() const override { return "logreg"; }
  bool supports(Task task) const override { return task == Task::Sentences; }
  void fit(const SentenceCorpus& train, const SentenceCorpus& validation) override {
    model_.emplace(logreg::train(train.sentences(), ontology_, config_, validation.sentences()).model);
  }
  std::vector<std::string> classify(std::span<const LabeledSentence> sentences) override {
    if (!model_) throw Error(Errc::InvalidArgument, "logreg used before fit");
    std::vector<std::string> out;
    for (const auto& s : sentences) out.push_back(model_->predict(s.text).label);
    return out;
  }
  SegmentationResult segment(const ClinicalNote&) override {
    throw Error(Errc::InvalidArgument, "logreg does not segment freetext");
  }
  std::size_t parallelism() const override { return std::max(1u, std::thread::hardware_concurrency()); }

 private:
  LabelOntology ontology_;
  logreg::TrainConfig config_;
  std::optional<logreg::LogRegModel> model_;
};

class GoldMethod : public SegmentationMethod {
 public:
  std::string name() const override { return "gold"; }
  bool supports(Task) const override { return true; }
  std::vector<std::string> classify(std::span<const LabeledSentence> sentences) override {
    std::vector<std::string> out;
    for (const auto& s : sentences) out.push_back(s.label);
    return out;
  }
  SegmentationResult segment(const ClinicalNote& note) override {
    if (!note.gold) throw Error(Errc::InvalidArgument, "note " + note.note_id + " has no gold spans");
    return SegmentationResult{note.note_id, *note.gold, "gold"};
  }
};

class LlmMethod : public SegmentationMethod {
 public:
  LlmMethod(std::string name, llm::LlmEndpoint endpoint, std::shared_ptr<llm::Transport> transport,
            std::shared_ptr<llm::ResponseCache> cache, const LabelOntology& ontology)
      : name_(std::move(name)),
        transport_(std::move(transport)),
        cache_(std::move(cache)),
        runner_(std::move(endpoint), *transport_, cache_.get()),
        ontology_(ontology) {}
  std::string name() const override { return name_; }
  bool supports(Task) const override { return true; }
  std::vector<std::string> classify(std::span<const LabeledSentence> sentences) override {
    std::vector<std::string> texts;
    for (const auto& s : sentences) texts.push_back(s.text);
    auto trace = runner_.run(llm::build_classification_prompt(ontology_, texts));
    auto parsed = llm::parse_classification(trace.response, texts.size(), ontology_);
    count(parsed.status);
    return parsed.labels;
  }
  SegmentationResult segment(const ClinicalNote& note) override {
    auto trace = runner_.run(llm::build_segmentation_prompt(ontology_, note));
    auto parsed = llm::parse_segmentation(trace.response, note, ontology_, name_);
    count(parsed.status);
    return parsed.result;
  }
  std::size_t parallelism() const override { return runner_.endpoint().max_parallel; }
  bool reports_parse_status() const override { return true; }
  ParseCounts take_parse_counts() override {
    ParseCounts c{ok_.exchange(0), partial_.exchange(0), failed_.exchange(0)};
    return c;
  }

 private:
  void count(llm::ParseStatus status) {
    if (status == llm::ParseStatus::Ok) ++ok_;
    else if (status == llm::ParseStatus::Partial) ++partial_;
    else ++failed_;
  }

  std::string name_;
  std::shared_ptr<llm::Transport> transport_;
  std::shared_ptr<llm::ResponseCache> cache_;
  llm::LlmRunner runner_;
  LabelOntology ontology_;
  std::atomic<std::size_t> ok_{0}, partial_{0}, failed_{0};
};

}  // namespace

std::unique_ptr<SegmentationMethod> make_rules_method(rules::Method kind, const LabelOntology& ontology) {
  return std::make_unique<RulesMethod>(kind, ontology);
}

std::unique_ptr<SegmentationMethod> make_logreg_method(const LabelOntology& ontology,
                                                       const logreg::TrainConfig& config) {
  return std::make_unique<LogRegMethod>(ontology, config);
}

std::unique_ptr<SegmentationMethod> make_gold_method() { return std::make_unique<GoldMethod>(); }

std::unique_ptr<SegmentationMethod> make_llm_method(std::string name, llm::LlmEndpoint endpoint,
                                                    std::shared_ptr<llm::Transport> transport,
                                                    std::shared_ptr<llm::ResponseCache> cache,
                                                    const LabelOntology& ontology) {
  return std::make_unique<LlmMethod>(std::move(name), std::move(endpoint), std::move(transport), std::move(cache),
                                     ontology);
}

void check_no_leakage(const FoldRun& run) {
  std::set<std::string> test(run.test.begin(), run.test.end());
  for (const auto* part : {&run.train, &run.validation})
    for (const auto& id : *part)
      if (test.count(id)) throw Error(Errc::InvalidArgument, "test note " + id + " leaks into training input");
}

ExperimentInputs load_inputs(const ExperimentConfig& config) {
  LabelOntology ontology = config.ontology ? LabelOntology::load(*config.ontology) : LabelOntology::default_ontology();
  SentenceCorpus sentences = load_sentence_corpus(config.sentences, ontology, config.label_mode);
  FreetextCorpus freetext = config.freetext ? load_freetext(*config.freetext, ontology) : synthesize_freetext(sentences);
  return ExperimentInputs{std::move(sentences), std::move(freetext)};
}

std::vector<std::unique_ptr<SegmentationMethod>> build_methods(const ExperimentConfig& config,
                                                               const LabelOntology& ontology) {
  std::shared_ptr<llm::ResponseCache> cache;
  if (config.cache_dir) cache = std::make_shared<llm::ResponseCache>(*config.cache_dir);
  std::vector<std::unique_ptr<SegmentationMethod>> methods;
  for (const auto& m : config.methods) {
    if (m == "rules" || m == "regex") {
      methods.push_back(make_rules_method(*rules::parse_method(m), ontology));
    } else if (m == "logreg") {
      methods.push_back(make_logreg_method(ontology, config.train));
    } else if (m == "gold") {
      methods.push_back(make_gold_method());
    } else if (m == "mock") {
      auto script = config.mock_script ? llm::MockTransport::load_script(*config.mock_script) : llm::MockTransport::Script{};
      llm::LlmEndpoint ep;
      ep.name = "mock";
      ep.backoff = std::chrono::milliseconds(0);
      methods.push_back(make_llm_method("mock", ep, std::make_shared<llm::MockTransport>(script, ontology), cache, ontology));
    } else {
      const std::string name = m.substr(4);
      auto ep = *std::find_if(config.endpoints.begin(), config.endpoints.end(),
                              [&](const llm::LlmEndpoint& e) { return e.name == name; });
      methods.push_back(make_llm_method(m, ep, std::make_shared<llm::HttpTransport>(), cache, ontology));
    }
  }
  return methods;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  auto inputs = load_inputs(config);
  auto methods = build_methods(config, inputs.sentences.ontology());
  return run_experiment(config, inputs, methods);
}

ExperimentResult run_experiment(const ExperimentConfig& config, const ExperimentInputs& inputs,
                                std::span<const std::unique_ptr<SegmentationMethod>> methods) {
  const auto& corpus = inputs.sentences;
  const auto& ontology = corpus.ontology();
  std::map<std::string, const ClinicalNote*> notes_by_id;
  for (const auto& note : inputs.freetext.notes) notes_by_id[note.note_id] = &note;
  for (const auto& [id, note] : notes_by_id)
    if (corpus.note_sentences(id).empty())
      throw Error(Errc::InvalidArgument, "freetext note " + id + " is not in the sentence corpus");

  ExperimentResult result;
  result.plan = make_splits(corpus, config.k, config.seed);
  result.stats = tag_statistics(corpus, config.min_count);
  const std::size_t runs = std::min(config.k, config.max_folds.value_or(config.k));

  for (const auto& method : methods) {
    ResultRow row;
    row.method = method->name();
    std::map<Task, TaskScores> sums;
    std::map<Task, std::size_t> counted;
    SegmentationMethod::ParseCounts parse_total;

    for (std::size_t fold = 0; fold < runs; ++fold) {
      const FoldRun run = result.plan.run(fold);
      check_no_leakage(run);
      auto context = [&](const Error& e) {
        return Error(e.code(), "method " + method->name() + ", fold " + std::to_string(fold) + ": " + e.what());
      };
      try {
        method->fit(corpus.subset(run.train), corpus.subset(run.validation));
      } catch (const Error& e) {
        throw context(e);
      }

      for (Task task : config.tasks) {
        if (!method->supports(task)) continue;
        FoldRecord rec;
        rec.method = method->name();
        rec.task = task;
        rec.fold = fold;
        try {
          if (task == Task::Sentences) {
            std::vector<std::vector<std::string>> preds(run.test.size());
            parallel_for(run.test.size(), method->parallelism(),
                         [&](std::size_t i) { preds[i] = method->classify(corpus.note_sentences(run.test[i])); });
            std::vector<std::string> pred, gold;
            for (std::size_t i = 0; i < run.test.size(); ++i) {
              const auto sents = corpus.note_sentences(run.test[i]);
              if (preds[i].size() != sents.size())
                throw Error(Errc::LengthMismatch, "method returned the wrong number of labels");
              for (std::size_t s = 0; s < sents.size(); ++s) {
                gold.push_back(sents[s].label);
                pred.push_back(ontology.contains(preds[i][s]) ? preds[i][s] : ontology.fallback_label());
              }
            }
            const auto scores = metrics::weighted_f1(pred, gold, ontology);
            rec.n = scores.n;
            rec.precision = scores.precision;
            rec.recall = scores.recall;
            rec.f1 = scores.f1;
            rec.per_class = scores.per_class;
          } else {
            std::vector<const ClinicalNote*> test_notes;
            for (const auto& id : run.test) {
              auto it = notes_by_id.find(id);
              if (it != notes_by_id.end()) test_notes.push_back(it->second);
            }
            std::vector<metrics::PRFScores> per_note(test_notes.size());
            parallel_for(test_notes.size(), method->parallelism(), [&](std::size_t i) {
              const ClinicalNote& note = *test_notes[i];
              auto seg = method->segment(note);
              validate_spans(seg.spans, tokenize(note.text).size());
              SegmentationResult gold{note.note_id, note.gold.value_or(std::vector<SectionSpan>{}), "gold"};
              per_note[i] = metrics::boundary_prf(metrics::boundaries_of(seg), metrics::boundaries_of(gold));
            });
            for (const auto& s : per_note) rec.boundary += s;
            rec.n = test_notes.size();
            rec.precision = rec.boundary.precision;
            rec.recall = rec.boundary.recall;
            rec.f1 = rec.boundary.f1;
          }
        } catch (const Error& e) {
          throw context(e);
        }
        const auto pc = method->take_parse_counts();
        rec.parse_ok = pc.ok;
        rec.parse_partial = pc.partial;
        rec.parse_failed = pc.failed;
        parse_total.ok += pc.ok;
        parse_total.partial += pc.partial;
        parse_total.failed += pc.failed;

        auto& sum = sums[task];
        sum.precision += rec.precision;
        sum.recall += rec.recall;
        sum.f1 += rec.f1;
        ++counted[task];
        result.folds.push_back(std::move(rec));
      }
    }

    for (const auto& [task, sum] : sums) {
      const double n = static_cast<double>(counted[task]);
      TaskScores mean{100.0 * sum.precision / n, 100.0 * sum.recall / n, 100.0 * sum.f1 / n};
      (task == Task::Sentences ? row.sentences : row.freetext) = mean;
    }
    if (method->reports_parse_status()) {
      const std::size_t total = parse_total.ok + parse_total.partial + parse_total.failed;
      row.parse_failure_rate = total == 0 ? 0.0 : 100.0 * static_cast<double>(parse_total.failed) / static_cast<double>(total);
    }
    result.table.rows.push_back(std::move(row));
  }
  result.table.fill_avg_f1();
  return result;
}

std::string format_results_tsv(const ResultsTable& table) {
  std::ostringstream out;
  out << "method";
  for (Column c : kScoreColumns) out << '\t' << column_name(c);
  out << "\tparse_failure_rate\n";
  for (const auto& row : table.rows) {
    out << row.method;
    for (Column c : kScoreColumns) {
      auto v = cell(row, c);
      out << '\t' << (v ? fmt1(*v) : "-");
    }
    out << '\t' << (row.parse_failure_rate ? fmt1(*row.parse_failure_rate) : "-") << '\n';
  }
  return out.str();
}

ResultsTable parse_results_tsv(std::string_view tsv) {
  std::istringstream in{std::string(tsv)};
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  ResultsTable table;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cur;
    std::istringstream ls(s);
    while (std::getline(ls, cur, '\t')) cells.push_back(cur);
    if (!s.empty() && s.back() == '\t') cells.emplace_back();
    return cells;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line);
    if (header.empty()) {
      header = cells;
      if (header.empty() || header[0] != "method") throw Error(Errc::MalformedRecord, "expected a 'method' header", line_no);
      continue;
    }
    if (cells.size() != header.size()) throw Error(Errc::MalformedRecord, "wrong column count", line_no);
    ResultRow row;
    row.method = cells[0];
    std::map<std::string, std::optional<double>> values;
    for (std::size_t i = 1; i < cells.size(); ++i) {
      if (cells[i] == "-" || cells[i].empty()) {
        values[header[i]] = std::nullopt;
        continue;
      }
      try {
        std::size_t used = 0;
        values[header[i]] = std::stod(cells[i], &used);
        if (used != cells[i].size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw Error(Errc::MalformedRecord, "bad number '" + cells[i] + "'", line_no);
      }
    }
    auto get = [&](Column c) -> std::optional<double> {
      auto it = values.find(std::string(column_name(c)));
      return it == values.end() ? std::nullopt : it->second;
    };
    auto triple = [&](Column p, Column r, Column f) -> std::optional<TaskScores> {
      auto pv = get(p), rv = get(r), fv = get(f);
      if (!pv && !rv && !fv) return std::nullopt;
      return TaskScores{pv.value_or(0.0), rv.value_or(0.0), fv.value_or(0.0)};
    };
    row.sentences = triple(Column::SentP, Column::SentR, Column::SentF1);
    row.freetext = triple(Column::FreeP, Column::FreeR, Column::FreeF1);
    row.avg_f1 = get(Column::AvgF1);
    if (auto it = values.find("parse_failure_rate"); it != values.end()) row.parse_failure_rate = it->second;
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string format_results_text(const ResultsTable& table) {
  const auto marks = mark_best(table);
  const std::vector<std::string> headers = {"Model",   "Sent P",  "Sent R", "Sent F1", "Free P",
                                            "Free R",  "Free F1", "Avg F1", "Parse fail %"};
  std::vector<std::vector<std::string>> grid;
  grid.push_back(headers);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    std::vector<std::string> line = {row.method};
    for (std::size_t c = 0; c < std::size(kScoreColumns); ++c) {
      auto v = cell(row, kScoreColumns[c]);
      std::string text = v ? fmt1(*v) : "-";
      if (marks[r][c] == Mark::Best) text = "**" + text + "**";
      if (marks[r][c] == Mark::Second) text = "_" + text + "_";
      line.push_back(std::move(text));
    }
    line.push_back(row.parse_failure_rate ? fmt1(*row.parse_failure_rate) : "-");
    grid.push_back(std::move(line));
  }
  std::vector<std::size_t> width(headers.size(), 0);
  for (const auto& line : grid)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  std::ostringstream out;
  for (std::size_t l = 0; l < grid.size(); ++l) {
    for (std::size_t c = 0; c < grid[l].size(); ++c) {
      if (c == 0) {
        out << std::left << std::setw(static_cast<int>(width[c])) << grid[l][c];
      } else {
        out << "  " << std::right << std::setw(static_cast<int>(width[c])) << grid[l][c];
      }
    }
    out << '\n';
    if (l == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w + 2;
      out << std::string(total - 2, '-') << '\n';
    }
  }
  out << "\n**x** = best in column, _x_ = second best. Avg F1 is ranked among rows scored on every task.\n";
  return out.str();
}

std::vector<AnovaAttempt> anova_attempts(const ResultsTable& table) {
  std::vector<AnovaAttempt> out;
  auto attempt = [&](std::string grouping, const std::vector<std::vector<double>>& groups) {
    AnovaAttempt a;
    a.grouping = std::move(grouping);
    try {
      a.result = metrics::one_way_anova(groups);
    } catch (const Error& e) {
      a.note = e.what();
    }
    out.push_back(std::move(a));
  };
  std::vector<double> sent, free;
  std::vector<std::vector<double>> by_model;
  for (const auto& row : table.rows) {
    std::vector<double> g;
    if (row.sentences) {
      sent.push_back(metrics::round_half_up_1(row.sentences->f1));
      g.push_back(sent.back());
    }
    if (row.freetext) {
      free.push_back(metrics::round_half_up_1(row.freetext->f1));
      g.push_back(free.back());
    }
    if (!g.empty()) by_model.push_back(std::move(g));
  }
  std::vector<std::vector<double>> by_task;
  if (!sent.empty()) by_task.push_back(sent);
  if (!free.empty()) by_task.push_back(free);
  attempt("task", by_task);
  attempt("model", by_model);
  return out;
}

std::string format_anova(std::span<const AnovaAttempt> attempts) {
  std::ostringstream out;
  out << "One-way ANOVA over F1 cells\n";
  for (const auto& a : attempts) {
    out << "grouping=" << a.grouping << ": ";
    if (!a.result) {
      out << "not computable (" << a.note << ")\n";
      continue;
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "F(%zu, %zu) = %.4f, p = %.4f", a.result->df_between, a.result->df_within,
                  a.result->f_stat, a.result->p_value);
    out << buf << '\n';
  }
  return out.str();
}

namespace {

json fold_to_json(const FoldRecord& f) {
  json j = {{"method", f.method}, {"task", task_name(f.task)}, {"fold", f.fold},  {"n", f.n},
            {"precision", f.precision}, {"recall", f.recall}, {"f1", f.f1}};
  if (f.task == Task::Freetext) {
    j["tp"] = f.boundary.tp;
    j["fp"] = f.boundary.fp;
    j["fn"] = f.boundary.fn;
  } else {
    json classes = json::array();
    for (const auto& c : f.per_class)
      classes.push_back({{"label", c.label}, {"support", c.support}, {"tp", c.scores.tp},
                         {"fp", c.scores.fp}, {"fn", c.scores.fn}});
    j["per_class"] = std::move(classes);
  }
  if (f.parse_ok + f.parse_partial + f.parse_failed > 0)
    j["parse"] = {{"ok", f.parse_ok}, {"partial", f.parse_partial}, {"failed", f.parse_failed}};
  return j;
}

}  // namespace

std::vector<std::string> emit_reports(const ExperimentResult& result, const std::filesystem::path& out_dir,
                                      const ExperimentConfig* config) {
  if (result.table.rows.empty()) throw Error(Errc::InvalidArgument, "empty results table");
  result.table.check_invariants();
  std::filesystem::create_directories(out_dir);
  std::map<std::string, std::string> files;

  files["results.tsv"] = format_results_tsv(result.table);
  files["results.txt"] = format_results_text(result.table);

  {
    std::ostringstream radar;
    radar << "method\ttask\tmetric\tvalue\n";
    for (const auto& row : result.table.rows) {
      for (auto [task, scores] : {std::pair{Task::Sentences, row.sentences}, std::pair{Task::Freetext, row.freetext}}) {
        if (!scores) continue;
        radar << row.method << '\t' << task_name(task) << "\tprecision\t" << fmt1(scores->precision) << '\n';
        radar << row.method << '\t' << task_name(task) << "\trecall\t" << fmt1(scores->recall) << '\n';
        radar << row.method << '\t' << task_name(task) << "\tf1\t" << fmt1(scores->f1) << '\n';
      }
    }
    files["radar.tsv"] = radar.str();
  }
  {
    std::string folds;
    for (const auto& f : result.folds) folds += fold_to_json(f).dump() + "\n";
    files["folds.jsonl"] = std::move(folds);
  }
  files["anova.txt"] = format_anova(anova_attempts(result.table));

  const auto& stats = result.stats;
  {
    const auto labels = stats.frequent_labels();
    std::vector<std::pair<std::string, std::size_t>> frequent(labels.begin(), labels.end());
    std::stable_sort(frequent.begin(), frequent.end(), [](auto& a, auto& b) { return a.second > b.second; });
    std::ostringstream out;
    out << "label\tcount\n";
    for (const auto& [label, count] : frequent) out << label << '\t' << count << '\n';
    files["tag_histogram.tsv"] = out.str();
  }
  {
    std::ostringstream out;
    out << "tags\tnotes\n";
    for (const auto& [tags, notes] : stats.tags_per_note_histogram()) out << tags << '\t' << notes << '\n';
    files["tags_per_note.tsv"] = out.str();
  }
  {
    std::ostringstream out;
    out << "label\tlength\tcount\n";
    for (const auto& [label, lengths] : stats.sentence_lengths)
      for (const auto& [len, count] : lengths) out << label << '\t' << len << '\t' << count << '\n';
    files["sentence_lengths.tsv"] = out.str();
  }

  for (const auto& [name, contents] : files) write_file(out_dir / name, contents);

  json manifest;
  manifest["seed"] = result.plan.seed;
  manifest["k"] = result.plan.k;
  json outputs = json::object();
  for (const auto& [name, contents] : files) outputs[name] = llm::sha256_hex(contents);
  manifest["outputs"] = outputs;
  if (config) {
    manifest["methods"] = config->methods;
    json inputs = json::object();
    auto add = [&](const std::optional<std::filesystem::path>& p) {
      if (p) inputs[p->string()] = llm::sha256_hex(read_file(*p));
    };
    add(config->sentences);
    add(config->freetext);
    add(config->ontology);
    add(config->mock_script);
    manifest["inputs"] = inputs;
  }
  write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");

  std::vector<std::string> names;
  for (const auto& [name, contents] : files) names.push_back(name);
  names.push_back("manifest.json");
  return names;
}

}  // namespace cnseg::harness
