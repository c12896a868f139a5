#include "cnseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "cnseg/error.hpp"

namespace cnseg::metrics {

BoundarySet boundaries_of(const SegmentationResult& seg) {
  BoundarySet set{seg.note_id, {}};
  for (const auto& span : seg.spans) set.starts.insert(span.token_start);
  return set;
}

PRFScores PRFScores::from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  PRFScores s;
  s.tp = tp;
  s.fp = fp;
  s.fn = fn;
  s.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  s.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  const double denom = s.precision + s.recall;
  s.f1 = denom == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / denom;
  return s;
}

PRFScores& PRFScores::operator+=(const PRFScores& other) {
  *this = from_counts(tp + other.tp, fp + other.fp, fn + other.fn);
  return *this;
}

PRFScores boundary_prf(const BoundarySet& pred, const BoundarySet& gold) {
  if (pred.note_id != gold.note_id)
    throw Error(Errc::NoteMismatch, "prediction for '" + pred.note_id + "' scored against '" +
                                        gold.note_id + "'");
  std::size_t tp = 0;
  for (std::size_t idx : pred.starts) tp += gold.starts.count(idx);
  return PRFScores::from_counts(tp, pred.starts.size() - tp, gold.starts.size() - tp);
}

WeightedScores weighted_f1(std::span<const std::string> pred, std::span<const std::string> gold,
                           const LabelOntology& ontology) {
  if (pred.size() != gold.size())
    throw Error(Errc::LengthMismatch, std::to_string(pred.size()) + " predictions for " +
                                          std::to_string(gold.size()) + " gold labels");
  struct Counts {
    std::size_t tp = 0, fp = 0, fn = 0, support = 0;
  };
  std::map<std::string, Counts> counts;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    ++counts[gold[i]].support;
    if (pred[i] == gold[i]) {
      ++counts[gold[i]].tp;
    } else {
      ++counts[pred[i]].fp;
      ++counts[gold[i]].fn;
    }
  }

  std::vector<std::string> order;
  for (const auto& label : ontology.labels())
    if (counts.count(label)) order.push_back(label);
  for (const auto& [label, c] : counts)
    if (!ontology.contains(label)) order.push_back(label);

  WeightedScores out;
  out.n = gold.size();
  for (const auto& label : order) {
    const Counts& c = counts[label];
    ClassScore cs{label, c.support, PRFScores::from_counts(c.tp, c.fp, c.fn)};
    if (out.n > 0) {
      const double w = static_cast<double>(c.support) / static_cast<double>(out.n);
      out.precision += w * cs.scores.precision;
      out.recall += w * cs.scores.recall;
      out.f1 += w * cs.scores.f1;
    }
    out.per_class.push_back(std::move(cs));
  }
  return out;
}

AgreementReport cohen_kappa(std::span<const std::string> labels_a,
                            std::span<const std::string> labels_b) {
  if (labels_a.size() != labels_b.size())
    throw Error(Errc::LengthMismatch, "label vectors differ in length");
  if (labels_a.empty()) throw Error(Errc::EmptyInput, "no items to compare");

  const std::size_t n = labels_a.size();
  std::size_t agree = 0;
  std::map<std::string, std::pair<std::size_t, std::size_t>> marginals;
  for (std::size_t i = 0; i < n; ++i) {
    agree += labels_a[i] == labels_b[i];
    ++marginals[labels_a[i]].first;
    ++marginals[labels_b[i]].second;
  }
  // Integer numerator keeps the p_e == 1 test exact.
  unsigned long long expected_num = 0;
  for (const auto& [label, m] : marginals)
    expected_num += static_cast<unsigned long long>(m.first) * m.second;
  const unsigned long long n2 = static_cast<unsigned long long>(n) * n;

  AgreementReport r;
  r.n = n;
  r.percent_agreement = static_cast<double>(agree) / static_cast<double>(n);
  r.expected_agreement = static_cast<double>(expected_num) / static_cast<double>(n2);
  if (expected_num == n2) {
    r.kappa = agree == n ? 1.0 : 0.0;
  } else {
    r.kappa = (r.percent_agreement - r.expected_agreement) / (1.0 - r.expected_agreement);
  }
  return r;
}

MajorityLabel majority_label(std::span<const std::string> labels) {
  if (labels.empty()) throw Error(Errc::EmptyInput, "no labels to vote on");
  std::map<std::string, std::size_t> votes;
  for (const auto& l : labels) ++votes[l];
  std::size_t best = 0;
  for (const auto& [label, count] : votes) best = std::max(best, count);
  MajorityLabel out;
  std::size_t winners = 0;
  // std::map iterates in lexicographic order, so the first winner is the smallest.
  for (const auto& [label, count] : votes) {
    if (count != best) continue;
    if (winners++ == 0) out.label = label;
  }
  out.tie = winners > 1;
  return out;
}

MajorityLabel majority_label(std::span<const AnnotationRecord> records) {
  std::vector<std::string> labels;
  labels.reserve(records.size());
  for (const auto& r : records) labels.push_back(r.label);
  return majority_label(labels);
}

namespace {

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw Error(Errc::InvalidArgument, "beta shape must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  // The fraction converges fastest on the side of the distribution's mean.
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double f_upper_tail(double f, double df1, double df2) {
  if (f <= 0.0) return 1.0;
  if (std::isinf(f)) return 0.0;
  // P(F > f) = I_{df2/(df2 + df1 f)}(df2/2, df1/2)
  const double x = df2 / (df2 + df1 * f);
  return regularized_incomplete_beta(df2 / 2.0, df1 / 2.0, x);
}

AnovaResult one_way_anova(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw Error(Errc::TooFewGroups, "need at least two groups");
  std::size_t total_n = 0;
  double total_sum = 0.0;
  for (const auto& g : groups) {
    if (g.empty()) throw Error(Errc::InvalidArgument, "empty group");
    total_n += g.size();
    for (double v : g) total_sum += v;
  }
  if (total_n <= groups.size())
    throw Error(Errc::InvalidArgument, "need more observations than groups");

  const double grand_mean = total_sum / static_cast<double>(total_n);
  AnovaResult r;
  for (const auto& g : groups) {
    double sum = 0.0;
    for (double v : g) sum += v;
    const double mean = sum / static_cast<double>(g.size());
    r.ss_between += static_cast<double>(g.size()) * (mean - grand_mean) * (mean - grand_mean);
    for (double v : g) r.ss_within += (v - mean) * (v - mean);
  }
  if (!(r.ss_within > 0.0))
    throw Error(Errc::DegenerateVariance, "all within-group deviations are zero");

  r.df_between = groups.size() - 1;
  r.df_within = total_n - groups.size();
  const double ms_between = r.ss_between / static_cast<double>(r.df_between);
  const double ms_within = r.ss_within / static_cast<double>(r.df_within);
  r.f_stat = ms_between / ms_within;
  r.p_value = f_upper_tail(r.f_stat, static_cast<double>(r.df_between),
                           static_cast<double>(r.df_within));
  return r;
}

double round_half_up_1(double value) {
  // The epsilon absorbs binary representation error at exact .x5 midpoints.
  return std::floor(value * 10.0 + 0.5 + 1e-9) / 10.0;
}

std::optional<double> avg_f1(std::optional<double> sentence_f1, std::optional<double> freetext_f1) {
  if (sentence_f1 && freetext_f1) return round_half_up_1((*sentence_f1 + *freetext_f1) / 2.0);
  if (sentence_f1) return round_half_up_1(*sentence_f1);
  if (freetext_f1) return round_half_up_1(*freetext_f1);
  return std::nullopt;
}

}  // namespace cnseg::metrics
