#include <doctest.h>

#include <cmath>

#include "cnseg/error.hpp"
#include "cnseg/metrics.hpp"
#include "oracles.hpp"

using namespace cnseg;
using namespace cnseg::metrics;

namespace {

const LabelOntology& onto() {
  static const LabelOntology o = LabelOntology::default_ontology();
  return o;
}

// Random cover of n tokens by at most max_sections spans.
std::vector<SectionSpan> random_spans(oracle::Gen& g, std::size_t n, std::size_t max_sections) {
  std::set<std::size_t> starts = {0};
  const std::size_t want = g.between(1, std::min(n, max_sections));
  while (starts.size() < want) starts.insert(g.below(n));
  std::vector<std::size_t> s(starts.begin(), starts.end());
  std::vector<SectionSpan> out;
  for (std::size_t i = 0; i < s.size(); ++i)
    out.push_back({"OTHER", s[i], i + 1 < s.size() ? s[i + 1] : n, 0, 0});
  return out;
}

std::vector<bool> start_mask(const std::vector<SectionSpan>& spans, std::size_t n) {
  std::vector<bool> mask(n, false);
  for (const auto& s : spans) mask[s.token_start] = true;
  return mask;
}

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::IoError;
}

}  // namespace

TEST_CASE("boundary P/R/F1 basic cases") {
  BoundarySet gold{"n", {0, 4, 9}};
  CHECK(boundary_prf(gold, gold).f1 == 1.0);
  const auto s = boundary_prf(BoundarySet{"n", {0, 4, 7}}, gold);
  CHECK(s.tp == 2);
  CHECK(s.fp == 1);
  CHECK(s.fn == 1);
  CHECK(s.precision == doctest::Approx(2.0 / 3));
  CHECK(s.recall == doctest::Approx(2.0 / 3));
  const auto empty = boundary_prf(BoundarySet{"n", {}}, BoundarySet{"n", {}});
  CHECK(empty.precision == 0.0);
  CHECK(empty.recall == 0.0);
  CHECK(empty.f1 == 0.0);
  CHECK(code_of([&] { boundary_prf(BoundarySet{"a", {0}}, BoundarySet{"b", {0}}); }) == Errc::NoteMismatch);
}

TEST_CASE("boundary P/R/F1 matches the enumeration oracle on 500 random pairs") {
  oracle::Gen g(500);
  PRFScores micro;
  oracle::Counts micro_oracle;
  for (int i = 0; i < 500; ++i) {
    const std::size_t n = g.between(1, 50);
    const auto pred = random_spans(g, n, 8), gold = random_spans(g, n, 8);
    const auto got = boundary_prf(boundaries_of({"n", pred, "p"}), boundaries_of({"n", gold, "g"}));
    const auto want = oracle::boundary_counts(start_mask(pred, n), start_mask(gold, n));
    CHECK(got.tp == want.tp);
    CHECK(got.fp == want.fp);
    CHECK(got.fn == want.fn);
    CHECK(got.f1 == oracle::f1_from(want));
    micro += got;
    micro_oracle.tp += want.tp;
    micro_oracle.fp += want.fp;
    micro_oracle.fn += want.fn;
  }
  CHECK(micro.tp == micro_oracle.tp);
  CHECK(micro.f1 == oracle::f1_from(micro_oracle));
}

TEST_CASE("spurious boundaries never raise precision; correct ones never lower recall") {
  oracle::Gen g(8);
  for (int i = 0; i < 300; ++i) {
    const std::size_t n = g.between(2, 40);
    BoundarySet gold = boundaries_of({"n", random_spans(g, n, 8), "g"});
    BoundarySet pred = boundaries_of({"n", random_spans(g, n, 8), "p"});
    const auto base = boundary_prf(pred, gold);
    std::vector<std::size_t> spurious, missing;
    for (std::size_t t = 0; t < n; ++t) {
      if (!gold.starts.count(t) && !pred.starts.count(t)) spurious.push_back(t);
      if (gold.starts.count(t) && !pred.starts.count(t)) missing.push_back(t);
    }
    if (!spurious.empty()) {
      BoundarySet more = pred;
      more.starts.insert(g.pick(spurious));
      CHECK(boundary_prf(more, gold).precision <= base.precision);
    }
    if (!missing.empty()) {
      BoundarySet more = pred;
      more.starts.insert(g.pick(missing));
      CHECK(boundary_prf(more, gold).recall >= base.recall);
    }
  }
}

TEST_CASE("weighted F1 examples") {
  using V = std::vector<std::string>;
  const V gold = {"A", "A", "B", "B"}, pred = {"A", "B", "B", "B"};
  const auto w = weighted_f1(pred, gold, onto());
  REQUIRE(w.per_class.size() == 2);
  CHECK(w.per_class[0].scores.f1 == doctest::Approx(2.0 / 3));
  CHECK(w.per_class[1].scores.f1 == doctest::Approx(0.8));
  CHECK(w.f1 == doctest::Approx(0.7333).epsilon(1e-4));
  CHECK(weighted_f1(gold, gold, onto()).f1 == 1.0);
  CHECK(weighted_f1(V{"B"}, V{"A"}, onto()).f1 == 0.0);
  CHECK(code_of([&] { weighted_f1(V{"A"}, gold, onto()); }) == Errc::LengthMismatch);
}

TEST_CASE("weighted F1 agrees with a confusion-matrix oracle") {
  oracle::Gen g(33);
  const std::vector<std::string> classes = {"ALLERGIES", "SEX", "OTHER", "SERVICE", "HPI-LIKE"};
  for (int i = 0; i < 300; ++i) {
    const std::size_t n = g.between(1, 60);
    std::vector<std::string> pred, gold;
    for (std::size_t k = 0; k < n; ++k) {
      gold.push_back(g.pick(classes));
      pred.push_back(g.coin(0.6) ? gold.back() : g.pick(classes));
    }
    const auto got = weighted_f1(pred, gold, onto());
    const auto want = oracle::weighted_scores(pred, gold);
    CHECK(got.f1 == doctest::Approx(want.f1).epsilon(1e-12));
    CHECK(got.precision == doctest::Approx(want.precision).epsilon(1e-12));
    CHECK(got.recall == doctest::Approx(want.recall).epsilon(1e-12));
    CHECK(got.f1 >= 0.0);
    CHECK(got.f1 <= 1.0);
  }
}

TEST_CASE("weighted F1 equals accuracy when every class has the same F1") {
  // Symmetric confusion: each class gets one of its two items right.
  const std::vector<std::string> gold = {"A", "A", "B", "B", "C", "C"};
  const std::vector<std::string> pred = {"A", "B", "B", "C", "C", "A"};
  const auto w = weighted_f1(pred, gold, onto());
  for (const auto& c : w.per_class) CHECK(c.scores.f1 == doctest::Approx(0.5));
  CHECK(w.f1 == doctest::Approx(0.5));
}

TEST_CASE("Cohen kappa examples") {
  using V = std::vector<std::string>;
  const V a = {"A", "A", "B", "B"}, b = {"A", "B", "A", "B"};
  const auto r = cohen_kappa(a, b);
  CHECK(r.percent_agreement == doctest::Approx(0.5));
  CHECK(r.expected_agreement == doctest::Approx(0.5));
  CHECK(r.kappa == doctest::Approx(0.0));
  CHECK(r.n == 4);
  CHECK(cohen_kappa(a, a).kappa == 1.0);
  CHECK(cohen_kappa(V{"A", "A"}, V{"A", "A"}).kappa == 1.0);
  CHECK(cohen_kappa(V{"A", "A"}, V{"B", "B"}).kappa == 0.0);
  CHECK(code_of([] { cohen_kappa(V{}, V{}); }) == Errc::EmptyInput);
  CHECK(code_of([&] { cohen_kappa(a, V{"A"}); }) == Errc::LengthMismatch);
}

TEST_CASE("Cohen kappa matches the contingency-table oracle") {
  oracle::Gen g(50);
  const std::vector<std::string> classes = {"A", "B", "C", "D"};
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = g.between(1, 80);
    std::vector<std::string> a, b;
    for (std::size_t k = 0; k < n; ++k) {
      a.push_back(g.pick(classes));
      b.push_back(g.coin(0.5) ? a.back() : g.pick(classes));
    }
    double po = 0, pe = 0;
    const double want = oracle::kappa(a, b, &po, &pe);
    const auto got = cohen_kappa(a, b);
    CHECK(std::fabs(got.kappa - want) <= 1e-9);
    CHECK(std::fabs(got.percent_agreement - po) <= 1e-12);
    CHECK(std::fabs(got.expected_agreement - pe) <= 1e-12);
    CHECK(cohen_kappa(a, a).kappa == 1.0);
  }
}

TEST_CASE("constant system on a mixed corpus: agreement is the label frequency, kappa zero") {
  const std::vector<std::string> human = {"A", "A", "A", "B", "C"};
  const std::vector<std::string> system(5, "A");
  const auto r = cohen_kappa(human, system);
  CHECK(r.percent_agreement == doctest::Approx(0.6));
  CHECK(r.kappa == doctest::Approx(0.0));
}

TEST_CASE("majority label") {
  using V = std::vector<std::string>;
  CHECK(majority_label(V{"A", "A", "B"}).label == "A");
  CHECK_FALSE(majority_label(V{"A", "A", "B"}).tie);
  const auto tie = majority_label(V{"B", "A"});
  CHECK(tie.label == "A");
  CHECK(tie.tie);
  CHECK(majority_label(V{"SEX", "OTHER", "OTHER", "ALLERGIES"}).label == "OTHER");
  std::vector<AnnotationRecord> recs = {{"s", "x", "OTHER", 1}, {"s", "y", "SEX", 2}, {"s", "z", "OTHER", 3}};
  CHECK(majority_label(recs).label == "OTHER");
  CHECK(code_of([] { majority_label(V{}); }) == Errc::EmptyInput);
}

TEST_CASE("one-way ANOVA fixture and boundaries") {
  const auto r = one_way_anova({{1, 2, 3}, {2, 3, 4}});
  CHECK(r.f_stat == doctest::Approx(1.5));
  CHECK(r.df_between == 1);
  CHECK(r.df_within == 4);
  CHECK(r.p_value == doctest::Approx(0.2879).epsilon(1e-4));
  CHECK(std::fabs(r.p_value - oracle::f_upper_tail(1.5, 1, 4)) < 1e-10);
  const auto same = one_way_anova({{1, 2, 3}, {1, 2, 3}});
  CHECK(same.f_stat == 0.0);
  CHECK(same.p_value == 1.0);
  CHECK(code_of([] { one_way_anova({{1, 2}}); }) == Errc::TooFewGroups);
  CHECK(code_of([] { one_way_anova({{1, 1}, {2, 2}}); }) == Errc::DegenerateVariance);
}

TEST_CASE("ANOVA p-values match numeric integration of the F density") {
  oracle::Gen g(100);
  for (int i = 0; i < 100; ++i) {
    std::vector<std::vector<double>> groups(g.between(2, 5));
    for (auto& grp : groups) {
      const double shift = g.uniform(-2, 2);
      for (std::size_t k = g.between(1, 6); k > 0; --k) grp.push_back(shift + g.uniform(-3, 3));
    }
    groups[0].push_back(g.uniform(-3, 3));  // guarantees N > groups
    const auto got = one_way_anova(groups);
    const auto want = oracle::anova(groups);
    CHECK(got.f_stat == doctest::Approx(want.f).epsilon(1e-10));
    CHECK(std::fabs(got.p_value - want.p) < 1e-6);
  }
}

TEST_CASE("regularized incomplete beta identities") {
  CHECK(regularized_incomplete_beta(1, 1, 0.3) == doctest::Approx(0.3));
  CHECK(regularized_incomplete_beta(2, 3, 0.0) == 0.0);
  CHECK(regularized_incomplete_beta(2, 3, 1.0) == 1.0);
  for (double x : {0.1, 0.5, 0.9})
    CHECK(regularized_incomplete_beta(2.5, 1.5, x) + regularized_incomplete_beta(1.5, 2.5, 1 - x) ==
          doctest::Approx(1.0).epsilon(1e-12));
  CHECK(f_upper_tail(0.0, 3, 7) == 1.0);
}

TEST_CASE("Avg F1 and rounding") {
  CHECK(avg_f1(80.8, 63.9) == doctest::Approx(72.4));
  CHECK(avg_f1(78.0, 88.3) == doctest::Approx(83.2));
  CHECK(avg_f1(74.3, std::nullopt) == doctest::Approx(74.3));
  CHECK_FALSE(avg_f1(std::nullopt, std::nullopt));
  for (double x : {0.0, 12.3, 55.5, 99.9}) CHECK(avg_f1(x, x) == doctest::Approx(x));
  CHECK(round_half_up_1(0.15) == doctest::Approx(0.2));
  CHECK(round_half_up_1(72.35) == doctest::Approx(72.4));
  CHECK(round_half_up_1(72.349) == doctest::Approx(72.3));
}
