#include <doctest.h>

#include <cmath>

#include "cnseg/error.hpp"
#include "cnseg/logreg.hpp"
#include "cnseg/metrics.hpp"
#include "oracles.hpp"

using namespace cnseg;
using namespace cnseg::logreg;

namespace {

const LabelOntology& onto() {
  static const LabelOntology o = LabelOntology::default_ontology();
  return o;
}

LabeledSentence sent(const std::string& text, const std::string& label, std::size_t i = 0) {
  return LabeledSentence{"s" + std::to_string(i), "n" + std::to_string(i), 0, text, label};
}

// k classes, each with its own disjoint vocabulary.
std::vector<LabeledSentence> separable(std::size_t classes, std::size_t per_class, std::uint64_t seed) {
  static const std::vector<std::string> labels = {"ALLERGIES", "SEX", "SERVICE", "ATTENDING", "CHIEF COMPLAINT",
                                                  "PHYSICAL EXAM", "HOSPITAL COURSE"};
  oracle::Gen g(seed);
  std::vector<LabeledSentence> out;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t d = 0; d < per_class; ++d) {
      std::string text;
      for (std::size_t w = g.between(2, 6); w > 0; --w) text += "w" + std::to_string(c) + "_" + std::to_string(g.below(4)) + " ";
      out.push_back(sent(text, labels[c], out.size()));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("featurize counts in-vocabulary tokens") {
  const auto vocab = BowVocabulary::from_terms({"pain", "fever"}, 1, true);
  const auto x = featurize(vocab, "pain PAIN fever");
  REQUIRE(x.counts.size() == 2);
  CHECK(x.counts[0] == std::pair<std::size_t, double>{0, 2.0});
  CHECK(x.counts[1] == std::pair<std::size_t, double>{1, 1.0});
  CHECK(featurize(vocab, "nothing known").counts.empty());
  CHECK(vocab.index_of("cough") == -1);
}

TEST_CASE("featurize ignores token order") {
  oracle::Gen g(4);
  const auto vocab = BowVocabulary::from_terms({"a", "b", "c", "d"}, 1, true);
  const std::vector<std::string> words = {"a", "b", "c", "d", "zz"};
  for (int i = 0; i < 200; ++i) {
    std::vector<std::string> toks;
    for (std::size_t n = g.between(0, 10); n > 0; --n) toks.push_back(g.pick(words));
    std::string fwd, rev;
    for (const auto& t : toks) fwd += t + " ";
    for (auto it = toks.rbegin(); it != toks.rend(); ++it) rev += *it + " ";
    CHECK(featurize(vocab, fwd).counts == featurize(vocab, rev).counts);
  }
}

TEST_CASE("vocabulary honours min_count and only uses the given texts") {
  const std::vector<std::string> texts = {"chest pain", "Chest tightness", "fever"};
  const auto v = BowVocabulary::build(texts, 2, true);
  CHECK(v.terms() == std::vector<std::string>{"chest"});
  const auto all = BowVocabulary::build(texts, 1, true);
  CHECK(all.size() == 4);
  const auto folds = separable(3, 4, 1);
  std::set<std::string> seen;
  for (const auto& s : folds)
    for (const auto& t : tokenize(s.text)) seen.insert(t.text);
  std::vector<std::string> fold_texts;
  for (const auto& s : folds) fold_texts.push_back(s.text);
  const auto fold_vocab = BowVocabulary::build(fold_texts, 1, true);
  for (const auto& term : fold_vocab.terms()) CHECK(seen.count(term) == 1);
}

TEST_CASE("analytic gradient matches central finite differences") {
  oracle::Gen g(21);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t classes = 3, vocab = 4;
    std::vector<Example> batch;
    for (int d = 0; d < 3; ++d) {
      Example e;
      for (std::size_t f = 0; f < vocab; ++f)
        if (g.coin(0.6)) e.features.counts.emplace_back(f, static_cast<double>(g.between(1, 3)));
      e.label = g.below(classes);
      batch.push_back(e);
    }
    WeightMatrix w(classes, vocab);
    for (double& v : w.values) v = g.uniform(-1, 1);
    const double lambda = g.coin() ? 0.0 : 0.1;
    WeightMatrix grad(classes, vocab);
    objective(w, batch, lambda, &grad);
    for (std::size_t i = 0; i < w.values.size(); ++i) {
      const double h = 1e-5;
      WeightMatrix plus = w, minus = w;
      plus.values[i] += h;
      minus.values[i] -= h;
      const double numeric = (objective(plus, batch, lambda, nullptr) - objective(minus, batch, lambda, nullptr)) / (2 * h);
      const double scale = std::max({std::fabs(numeric), std::fabs(grad.values[i]), 1e-6});
      CHECK(std::fabs(numeric - grad.values[i]) / scale < 1e-4);
    }
  }
}

TEST_CASE("softmax outputs are a distribution and shift-invariant") {
  oracle::Gen g(5);
  for (int i = 0; i < 200; ++i) {
    WeightMatrix w(g.between(2, 6), 3);
    for (double& v : w.values) v = g.uniform(-20, 20);
    SparseFeatures x;
    x.counts = {{0, 1.0}, {2, static_cast<double>(g.below(5))}};
    const auto p = class_probabilities(w, x);
    double sum = 0;
    for (double v : p) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      sum += v;
    }
    CHECK(std::fabs(sum - 1.0) < 1e-9);
    WeightMatrix shifted = w;
    for (std::size_t c = 0; c < w.classes; ++c) shifted.at(c, w.features) += 7.5;
    const auto q = class_probabilities(shifted, x);
    CHECK(std::max_element(p.begin(), p.end()) - p.begin() == std::max_element(q.begin(), q.end()) - q.begin());
  }
}

TEST_CASE("zero weights give uniform probabilities and the first label") {
  auto data = separable(3, 3, 2);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 1;
  cfg.min_count = 1;
  const auto trained = train(data, onto(), cfg);
  const auto pred = trained.model.predict(data[0].text);
  for (double p : pred.probabilities) CHECK(p == doctest::Approx(1.0 / 3));
  CHECK(pred.label == trained.model.labels().front());
  // labels follow ontology order
  CHECK(trained.model.labels() == std::vector<std::string>{"SEX", "SERVICE", "ALLERGIES"});
}

TEST_CASE("separable two-class toy set reaches training accuracy 1") {
  const auto data = separable(2, 5, 3);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.min_count = 1;
  const auto model = train(data, onto(), cfg).model;
  for (const auto& s : data) CHECK(model.predict(s.text).label == s.label);
}

TEST_CASE("full-batch training with a small step never increases the loss") {
  const auto data = separable(3, 4, 6);
  TrainConfig cfg;
  cfg.batch_size = 0;
  cfg.learning_rate = 0.05;
  cfg.epochs = 50;
  cfg.min_count = 1;
  const auto report = train(std::span(data).subspan(0, 10), onto(), cfg).report;
  REQUIRE(report.train_loss.size() == 50);
  for (std::size_t i = 1; i < report.train_loss.size(); ++i)
    CHECK(report.train_loss[i] <= report.train_loss[i - 1] + 1e-12);
}

TEST_CASE("training is deterministic per seed and early stopping picks the best validation epoch") {
  const auto data = separable(4, 10, 7);
  const auto valid = separable(4, 3, 8);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.batch_size = 4;
  cfg.min_count = 1;
  const auto a = train(data, onto(), cfg, valid);
  const auto b = train(data, onto(), cfg, valid);
  CHECK(a.model.weights().values == b.model.weights().values);
  REQUIRE(a.report.validation_loss.size() == 40);
  const auto best = std::min_element(a.report.validation_loss.begin(), a.report.validation_loss.end());
  CHECK(a.report.best_epoch == static_cast<std::size_t>(best - a.report.validation_loss.begin()) + 1);
}

TEST_CASE("five-class separable corpus reaches weighted F1 of at least 0.95") {
  const auto data = separable(5, 30, 11);
  const auto test = separable(5, 10, 12);
  TrainConfig cfg;
  cfg.epochs = 200;
  const auto model = train(data, onto(), cfg).model;
  std::vector<std::string> pred, gold;
  for (const auto& s : test) {
    pred.push_back(model.predict(s.text).label);
    gold.push_back(s.label);
  }
  CHECK(metrics::weighted_f1(pred, gold, onto()).f1 >= 0.95);
}

TEST_CASE("model file round trip") {
  const auto data = separable(3, 6, 13);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.min_count = 1;
  const auto model = train(data, onto(), cfg).model;
  const auto text = model.serialize();
  CHECK(text.rfind("cnseg-logreg 1", 0) == 0);
  const auto back = LogRegModel::deserialize(text);
  CHECK(back.weights().values == model.weights().values);
  CHECK(back.labels() == model.labels());
  CHECK(back.vocabulary().terms() == model.vocabulary().terms());
  CHECK(back.serialize() == text);
  for (const auto& s : data) CHECK(back.predict(s.text).probabilities == model.predict(s.text).probabilities);
  CHECK_THROWS_AS(LogRegModel::deserialize("cnseg-logreg 2\n"), Error);
  CHECK_THROWS_AS(LogRegModel::deserialize(text.substr(0, text.size() / 2)), Error);
}

TEST_CASE("training errors") {
  std::vector<LabeledSentence> one = {sent("a b", "SEX", 0), sent("a c", "SEX", 1)};
  try {
    train(one, onto(), TrainConfig{});
    FAIL("expected DegenerateFold");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::DegenerateFold);
  }
  TrainConfig bad;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = TrainConfig{};
  bad.learning_rate = -1;
  CHECK_THROWS_AS(bad.validate(), Error);
}
