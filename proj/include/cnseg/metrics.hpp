#pragma once
// Boundary-token P/R/F1, weighted F1, agreement statistics and one-way ANOVA.

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cnseg/core.hpp"

namespace cnseg::metrics {

struct BoundarySet {
  std::string note_id;
  std::set<std::size_t> starts;  // token indices of section-start tokens
};

BoundarySet boundaries_of(const SegmentationResult& seg);

struct PRFScores {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  static PRFScores from_counts(std::size_t tp, std::size_t fp, std::size_t fn);
  // Micro aggregation: counts are summed, ratios recomputed.
  PRFScores& operator+=(const PRFScores& other);
};

PRFScores boundary_prf(const BoundarySet& pred, const BoundarySet& gold);

struct ClassScore {
  std::string label;
  std::size_t support = 0;  // gold occurrences
  PRFScores scores;
};

struct WeightedScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t n = 0;
  std::vector<ClassScore> per_class;  // ontology order, then unseen labels sorted
};

// One-vs-rest per-class scores weighted by gold class frequency.
WeightedScores weighted_f1(std::span<const std::string> pred, std::span<const std::string> gold,
                           const LabelOntology& ontology);

struct AgreementReport {
  double kappa = 0.0;
  double percent_agreement = 0.0;  // p_o
  double expected_agreement = 0.0;  // p_e
  std::size_t n = 0;
};

AgreementReport cohen_kappa(std::span<const std::string> labels_a,
                            std::span<const std::string> labels_b);

struct MajorityLabel {
  std::string label;
  bool tie = false;
};

// Plurality vote; ties go to the lexicographically smallest label.
MajorityLabel majority_label(std::span<const std::string> labels);
MajorityLabel majority_label(std::span<const AnnotationRecord> records);

struct AnovaResult {
  double f_stat = 0.0;
  double p_value = 1.0;
  std::size_t df_between = 0;
  std::size_t df_within = 0;
  double ss_between = 0.0;
  double ss_within = 0.0;
};

AnovaResult one_way_anova(const std::vector<std::vector<double>>& groups);

// Regularized incomplete beta I_x(a, b).
double regularized_incomplete_beta(double a, double b, double x);
// P(F > f) for an F(df1, df2) variate.
double f_upper_tail(double f, double df1, double df2);

// Half-up rounding to one decimal place.
double round_half_up_1(double value);
// Mean of the available task scores (0-100 scale), rounded half-up.
std::optional<double> avg_f1(std::optional<double> sentence_f1, std::optional<double> freetext_f1);

}  // namespace cnseg::metrics
