#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <unistd.h>

#include "cnseg/annotate.hpp"
#include "cnseg/error.hpp"
#include "cnseg/synthetic.hpp"
#include "oracles.hpp"

using namespace cnseg;
using namespace cnseg::annotate;
namespace fs = std::filesystem;

namespace {

const LabelOntology& onto() {
  static const LabelOntology o = LabelOntology::default_ontology();
  return o;
}

fs::path temp_file(const std::string& tag) {
  const auto dir = fs::temp_directory_path() / ("cnseg_annotate_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const auto p = dir / (tag + ".jsonl");
  fs::remove(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::InvalidArgument;
}

// Ten sentences in two notes.
SentenceCorpus ten_sentences() {
  std::vector<LabeledSentence> s;
  const std::vector<std::string> labels = {"CHIEF COMPLAINT", "ALLERGIES", "MEDICATIONS", "OTHER", "SEX"};
  for (std::size_t i = 0; i < 10; ++i)
    s.push_back(LabeledSentence{"s" + std::to_string(i), i < 5 ? "n1" : "n2", i % 5, "sentence " + std::to_string(i),
                                labels[i % 5]});
  return SentenceCorpus(std::move(s), onto());
}

const SentenceCorpus kCorpus = ten_sentences();

struct Fixture {
  explicit Fixture(const std::string& tag) : path(temp_file(tag)) {
    store = std::make_shared<AnnotationStore>(path);
    service = std::make_unique<AnnotationService>(store, onto(), [this] { return ++now; });
    service->load_corpus(ten_sentences());
  }
  fs::path path;
  std::int64_t now = 1000;
  std::shared_ptr<AnnotationStore> store;
  std::unique_ptr<AnnotationService> service;
};

}  // namespace

TEST_CASE("store appends and replays identically") {
  const auto path = temp_file("replay");
  std::vector<AnnotationRecord> written;
  {
    AnnotationStore store(path);
    for (int i = 0; i < 20; ++i) {
      AnnotationRecord r{"s" + std::to_string(i % 7), "a" + std::to_string(i % 3), "SEX", 100 + i};
      store.append(r);
      written.push_back(r);
    }
    CHECK(store.size() == 20);
  }
  AnnotationStore again(path);
  CHECK(again.log() == written);
  CHECK(*again.snapshot() == fold_log(written));
  CHECK(again.dropped_torn_lines() == 0);
}

TEST_CASE("a torn final line is dropped and truncated away") {
  const auto path = temp_file("torn");
  AnnotationIndex before;
  {
    AnnotationStore store(path);
    store.append({"s1", "a", "SEX", 1});
    store.append({"s2", "a", "ALLERGIES", 2});
    before = *store.snapshot();
  }
  const auto good = slurp(path);
  {
    std::ofstream out(path, std::ios::app | std::ios::binary);
    out << R"({"sentence_id":"s3","annotator_id":"a","lab)";
  }
  std::size_t good_bytes = 0, torn = 0;
  CHECK(AnnotationStore::replay(path, &good_bytes, &torn).size() == 2);
  CHECK(torn == 1);
  CHECK(good_bytes == good.size());
  {
    AnnotationStore store(path);
    CHECK(store.dropped_torn_lines() == 1);
    CHECK(*store.snapshot() == before);
    CHECK(slurp(path) == good);
    store.append({"s3", "a", "SEX", 3});
  }
  AnnotationStore after(path);
  CHECK(after.size() == 3);
  CHECK(after.dropped_torn_lines() == 0);
}

TEST_CASE("a malformed line in the middle of the log is an error") {
  const auto path = temp_file("corrupt");
  {
    std::ofstream out(path, std::ios::binary);
    out << R"({"sentence_id":"s1","annotator_id":"a","label":"SEX","timestamp":1})" << "\n";
    out << "garbage\n";
    out << R"({"sentence_id":"s2","annotator_id":"a","label":"SEX","timestamp":2})" << "\n";
  }
  try {
    AnnotationStore store(path);
    FAIL("expected MalformedRecord");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::MalformedRecord);
    CHECK(e.line() == 2);
  }
}

TEST_CASE("last write wins by timestamp then log position") {
  const std::vector<AnnotationRecord> log = {
      {"s", "a", "SEX", 5}, {"s", "a", "ALLERGIES", 3}, {"s", "b", "SEX", 1}, {"s", "b", "SERVICE", 1}};
  const auto index = fold_log(log);
  CHECK(index.at({"s", "a"}).label == "SEX");
  CHECK(index.at({"s", "b"}).label == "SERVICE");

  // Property: the fold equals a brute-force pick of max (timestamp, position).
  oracle::Gen g(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<AnnotationRecord> random_log;
    for (std::size_t n = g.between(1, 30); n > 0; --n)
      random_log.push_back({"s" + std::to_string(g.below(3)), "a" + std::to_string(g.below(3)),
                            g.pick(onto().labels()), static_cast<std::int64_t>(g.below(5))});
    const auto folded = fold_log(random_log);
    std::map<std::pair<std::string, std::string>, std::size_t> best;
    for (std::size_t i = 0; i < random_log.size(); ++i) {
      const auto key = std::pair{random_log[i].sentence_id, random_log[i].annotator_id};
      auto it = best.find(key);
      if (it == best.end() || random_log[i].timestamp_ms >= random_log[it->second].timestamp_ms) best[key] = i;
    }
    REQUIRE(folded.size() == best.size());
    for (const auto& [key, i] : best) CHECK(folded.at(key) == random_log[i]);
  }
}

TEST_CASE("tasks are dispatched until every sentence is labeled") {
  Fixture f("dispatch");
  std::set<std::string> seen;
  while (auto task = f.service->next_task("alice")) {
    CHECK(seen.insert(task->sentence_id).second);
    f.service->submit_label(task->sentence_id, "alice", "OTHER");
  }
  CHECK(seen.size() == 10);
  CHECK(f.service->next_task("bob")->sentence_id == "s0");
}

TEST_CASE("two annotators interleaving over ten sentences") {
  Fixture f("interleave");
  for (;;) {
    auto a = f.service->next_task("alice");
    auto b = f.service->next_task("bob");
    if (!a && !b) break;
    if (a) f.service->submit_label(a->sentence_id, "alice", a->label);
    if (b) f.service->submit_label(b->sentence_id, "bob", "OTHER");
  }
  CHECK(f.store->size() == 20);
  CHECK(f.store->snapshot()->size() == 20);
  std::map<std::string, std::string> echo;
  for (const auto& s : kCorpus.sentences()) echo[s.sentence_id] = s.label;
  f.service->set_predictions("echo", echo);
  const auto agreement = f.service->agreement_report("echo");
  CHECK(agreement.report.n == 10);
  // alice vs bob disagree except on OTHER: ties everywhere except s3 and s8
  CHECK(agreement.majority_ties == 8);
}

TEST_CASE("submission errors") {
  Fixture f("errors");
  CHECK(code_of([&] { f.service->submit_label("s1", "a", "NOT A LABEL"); }) == Errc::InvalidLabel);
  CHECK(code_of([&] { f.service->submit_label("s1", "a", "allergies"); }) == Errc::InvalidLabel);
  CHECK(code_of([&] { f.service->submit_label("nope", "a", "SEX"); }) == Errc::UnknownSentence);
  CHECK(f.store->size() == 0);

  auto store = std::make_shared<AnnotationStore>(temp_file("nocorpus"));
  AnnotationService empty(store, onto());
  CHECK(code_of([&] { empty.next_task("a"); }) == Errc::UnknownCorpus);
  CHECK(code_of([&] { empty.submit_label("s1", "a", "SEX"); }) == Errc::UnknownCorpus);
}

TEST_CASE("agreement reports") {
  Fixture f("agreement");
  std::map<std::string, std::string> echo, constant, late;
  for (const auto& s : kCorpus.sentences()) {
    echo[s.sentence_id] = s.label;
    constant[s.sentence_id] = "ALLERGIES";
  }
  late["zz"] = "SEX";
  f.service->set_predictions("echo", echo);
  f.service->set_predictions("constant", constant);
  f.service->set_predictions("elsewhere", late);
  for (int i = 0; i < 6; ++i) {
    const auto id = "s" + std::to_string(i);
    f.service->submit_label(id, "a", echo[id]);
    f.service->submit_label(id, "b", echo[id]);
  }
  const auto e = f.service->agreement_report("echo");
  CHECK(e.report.kappa == doctest::Approx(1.0));
  CHECK(e.report.n == 6);
  const auto c = f.service->agreement_report("constant");
  CHECK(c.report.n == 6);
  CHECK(c.report.kappa <= 0.0);
  CHECK(code_of([&] { f.service->agreement_report("elsewhere"); }) == Errc::NoOverlap);
  CHECK(code_of([&] { f.service->agreement_report("nobody"); }) == Errc::InvalidArgument);
}

TEST_CASE("distribution table with ties and fallback rates") {
  Fixture f("distribution");
  std::map<std::string, std::string> sys;
  for (int i = 0; i < 10; ++i) sys["s" + std::to_string(i)] = i < 3 ? "OTHER" : "SEX";
  f.service->set_predictions("sys", sys);
  f.service->set_subset("ambiguous", {"s0", "s1"});
  f.service->submit_label("s0", "a", "OTHER");
  f.service->submit_label("s0", "b", "OTHER");
  f.service->submit_label("s1", "a", "SEX");
  f.service->submit_label("s1", "b", "ALLERGIES");

  const auto t = f.service->distribution("ambiguous");
  CHECK(t.sentences == 2);
  CHECK(t.totals.human == 4);
  CHECK(t.totals.human_majority == 2);
  CHECK(t.totals.majority_ties == 1);
  std::map<std::string, DistributionRow> rows;
  for (const auto& r : t.rows) rows[r.label] = r;
  CHECK(rows.at("ALLERGIES").human_majority == 1);  // tie goes to the smaller label
  CHECK(rows.at("ALLERGIES").majority_ties == 1);
  CHECK(rows.at("OTHER").human == 2);
  CHECK(rows.at("OTHER").systems.at("sys") == 2);
  CHECK(t.fallback_rate_subset.at("human") == doctest::Approx(0.5));
  CHECK(t.fallback_rate_subset.at("sys") == doctest::Approx(1.0));
  CHECK(t.fallback_rate_all.at("sys") == doctest::Approx(0.3));
  std::size_t col = 0;
  for (const auto& r : t.rows) col += r.systems.at("sys");
  CHECK(col == t.totals.systems.at("sys"));

  const auto all = f.service->distribution("all");
  CHECK(all.sentences == 10);
  CHECK(code_of([&] { f.service->distribution("missing"); }) == Errc::InvalidArgument);
}

TEST_CASE("unknown predicted labels become the fallback") {
  Fixture f("fallback");
  f.service->set_predictions("odd", {{"s0", "MYSTERY"}, {"s1", "hpi"}});
  f.service->submit_label("s0", "a", "OTHER");
  f.service->submit_label("s1", "a", "HISTORY OF PRESENT ILLNESS");
  const auto t = f.service->distribution("all");
  std::map<std::string, DistributionRow> rows;
  for (const auto& r : t.rows) rows[r.label] = r;
  CHECK(rows.at("OTHER").systems.at("odd") >= 1);
}

TEST_CASE("concurrent submissions are all durable") {
  Fixture f("concurrent");
  std::atomic<std::size_t> acks{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t)
    threads.emplace_back([&, t] {
      for (int i = 0; i < 25; ++i) {
        f.service->submit_label("s" + std::to_string(i % 10), "ann" + std::to_string(t), "SEX");
        ++acks;
        (void)f.store->snapshot();
      }
    });
  for (auto& th : threads) th.join();
  CHECK(f.store->size() == acks.load());
  CHECK(AnnotationStore::replay(f.path).size() == acks.load());
  CHECK(f.store->snapshot()->size() == 80);
}

TEST_CASE("HTTP API") {
  Fixture f("http");
  std::map<std::string, std::string> echo;
  for (const auto& s : kCorpus.sentences()) echo[s.sentence_id] = s.label;
  f.service->set_predictions("echo", echo);
  AnnotationServer server(*f.service);
  const int port = server.start("127.0.0.1", 0);
  REQUIRE(port > 0);
  httplib::Client cli("127.0.0.1", port);

  auto next = cli.Get("/api/next?annotator=alice");
  REQUIRE(next);
  CHECK(next->status == 200);
  auto task = json::parse(next->body);
  CHECK(task["sentence_id"] == "s0");
  CHECK(task["done"] == false);
  CHECK(task["labels"].size() == onto().labels().size());

  auto post = cli.Post("/api/label", json{{"sentence_id", "s0"}, {"annotator_id", "alice"}, {"label", "CHIEF COMPLAINT"}}.dump(),
                       "application/json");
  REQUIRE(post);
  CHECK(post->status == 200);
  CHECK(json::parse(post->body)["store_size"] == 1);

  auto bad = cli.Post("/api/label", json{{"sentence_id", "s0"}, {"annotator_id", "alice"}, {"label", "NOPE"}}.dump(),
                      "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  CHECK(json::parse(bad->body)["error"] == "InvalidLabel");
  auto missing = cli.Post("/api/label", json{{"sentence_id", "zz"}, {"annotator_id", "alice"}, {"label", "SEX"}}.dump(),
                          "application/json");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  auto junk = cli.Post("/api/label", "{", "application/json");
  REQUIRE(junk);
  CHECK(junk->status == 400);

  auto agreement = cli.Get("/api/agreement?system=echo");
  REQUIRE(agreement);
  CHECK(agreement->status == 200);
  CHECK(json::parse(agreement->body)["n"] == 1);
  auto all = cli.Get("/api/agreement");
  REQUIRE(all);
  CHECK(json::parse(all->body)["systems"].size() == 1);

  auto dist = cli.Get("/api/distribution?subset=all");
  REQUIRE(dist);
  CHECK(dist->status == 200);
  CHECK(json::parse(dist->body)["sentences"] == 10);
  auto nodist = cli.Get("/api/distribution?subset=missing");
  REQUIRE(nodist);
  CHECK(nodist->status == 400);

  auto exported = cli.Get("/api/export");
  REQUIRE(exported);
  const auto records = json::parse(exported->body)["records"];
  REQUIRE(records.size() == 1);
  CHECK(record_from_json(records[0]) == f.store->log()[0]);
  server.stop();
}

TEST_CASE("prediction and subset files") {
  const auto preds = temp_file("preds");
  {
    std::ofstream out(preds);
    out << R"({"sentence_id":"s1","label":"SEX"})" << "\n" << R"({"sentence_id":"s2","label":"OTHER"})" << "\n";
  }
  const auto p = load_predictions(preds);
  CHECK(p.size() == 2);
  CHECK(p.at("s1") == "SEX");
  const auto subset = temp_file("subset");
  {
    std::ofstream out(subset);
    out << "# ambiguous rows\ns1\n\n  s2  \n";
  }
  CHECK(load_subset(subset) == std::vector<std::string>{"s1", "s2"});
}
