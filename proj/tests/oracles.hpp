#pragma once
// Independent reference implementations used only by tests. None of these
// call into the library code they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace oracle {

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

// Enumerates every token index and classifies it.
inline Counts boundary_counts(const std::vector<bool>& pred_start, const std::vector<bool>& gold_start) {
  Counts c;
  for (std::size_t i = 0; i < pred_start.size(); ++i) {
    if (pred_start[i] && gold_start[i]) ++c.tp;
    if (pred_start[i] && !gold_start[i]) ++c.fp;
    if (!pred_start[i] && gold_start[i]) ++c.fn;
  }
  return c;
}

inline double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

inline double f1_from(const Counts& c) {
  const double p = ratio(c.tp, c.tp + c.fp);
  const double r = ratio(c.tp, c.tp + c.fn);
  return ratio(2 * p * r, p + r);
}

struct Weighted {
  double precision = 0, recall = 0, f1 = 0;
};

// Full confusion matrix, then per-class scores weighted by gold support.
inline Weighted weighted_scores(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  std::set<std::string> classes(gold.begin(), gold.end());
  classes.insert(pred.begin(), pred.end());
  std::map<std::string, std::map<std::string, std::size_t>> confusion;  // gold -> pred -> n
  for (std::size_t i = 0; i < gold.size(); ++i) ++confusion[gold[i]][pred[i]];
  Weighted w;
  for (const auto& c : classes) {
    std::size_t tp = confusion[c][c], row = 0, col = 0;
    for (const auto& [p, n] : confusion[c]) row += n;
    for (const auto& [g, preds] : confusion) {
      auto it = preds.find(c);
      if (it != preds.end()) col += it->second;
    }
    const double p = ratio(tp, col), r = ratio(tp, row);
    const double f = ratio(2 * p * r, p + r);
    const double weight = static_cast<double>(row) / gold.size();
    w.precision += weight * p;
    w.recall += weight * r;
    w.f1 += weight * f;
  }
  return w;
}

// Kappa from the textbook definition with a contingency table.
inline double kappa(const std::vector<std::string>& a, const std::vector<std::string>& b, double* po_out = nullptr,
                    double* pe_out = nullptr) {
  std::map<std::string, double> ma, mb;
  double agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma[a[i]] += 1;
    mb[b[i]] += 1;
    if (a[i] == b[i]) agree += 1;
  }
  const double n = static_cast<double>(a.size());
  const double po = agree / n;
  double pe = 0;
  for (const auto& [label, ca] : ma) {
    auto it = mb.find(label);
    if (it != mb.end()) pe += (ca / n) * (it->second / n);
  }
  if (po_out) *po_out = po;
  if (pe_out) *pe_out = pe;
  if (std::fabs(1.0 - pe) < 1e-15) return po == 1.0 ? 1.0 : 0.0;
  return (po - pe) / (1.0 - pe);
}

// Adaptive tanh-sinh quadrature of g over (lo, hi); tolerates integrable
// endpoint singularities.
inline double tanh_sinh(const std::function<double(double)>& g, double lo, double hi) {
  const double half = 0.5 * (hi - lo);
  auto term = [&](double t) {
    const double s = 0.5 * M_PI * std::sinh(t);
    const double u = std::tanh(s);
    const double w = 0.5 * M_PI * std::cosh(t) / (std::cosh(s) * std::cosh(s));
    // distance to the nearer endpoint, computed without cancellation
    const double e = 1.0 / (std::exp(2 * std::fabs(s)) + 1.0) * 2.0;  // 1 - |u|
    double x = u >= 0 ? hi - half * e : lo + half * e;
    if (!(x > lo && x < hi)) return 0.0;
    return w * g(x);
  };
  double h = 1.0;
  double sum = term(0.0);
  for (int k = 1; k <= 60; ++k) {
    const double a = term(k * h), b = term(-k * h);
    sum += a + b;
    if (std::fabs(a) + std::fabs(b) < 1e-300 && k > 4) break;
  }
  double estimate = sum * h * half;
  for (int level = 0; level < 12; ++level) {
    h *= 0.5;
    double add = 0.0;
    for (int k = 1;; k += 2) {
      const double a = term(k * h), b = term(-k * h);
      add += a + b;
      if (k * h > 6.5) break;
    }
    sum += add;
    const double next = sum * h * half;
    if (std::fabs(next - estimate) < 1e-14 * std::max(1.0, std::fabs(next)) && level > 2) return next;
    estimate = next;
  }
  return estimate;
}

// P(F > f) for F(d1, d2) by integrating the beta density of
// u = d1 F / (d1 F + d2) over (u0, 1).
inline double f_upper_tail(double f, double d1, double d2) {
  if (f <= 0) return 1.0;
  const double a = d1 / 2, b = d2 / 2;
  const double log_beta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  const double u0 = d1 * f / (d1 * f + d2);
  auto density = [&](double u) { return std::exp((a - 1) * std::log(u) + (b - 1) * std::log1p(-u) - log_beta); };
  // integrate the smaller side for accuracy
  if (u0 > 0.5) return tanh_sinh(density, u0, 1.0);
  return 1.0 - tanh_sinh(density, 0.0, u0);
}

struct Anova {
  double f = 0, p = 0;
  double df1 = 0, df2 = 0;
};

inline Anova anova(const std::vector<std::vector<double>>& groups) {
  double n = 0, total = 0;
  for (const auto& g : groups) {
    n += g.size();
    for (double v : g) total += v;
  }
  const double grand = total / n;
  double ssb = 0, ssw = 0;
  for (const auto& g : groups) {
    double m = 0;
    for (double v : g) m += v;
    m /= g.size();
    ssb += g.size() * (m - grand) * (m - grand);
    for (double v : g) ssw += (v - m) * (v - m);
  }
  Anova a;
  a.df1 = groups.size() - 1.0;
  a.df2 = n - groups.size();
  a.f = (ssb / a.df1) / (ssw / a.df2);
  a.p = f_upper_tail(a.f, a.df1, a.df2);
  return a;
}

// Hand-rolled generators for property tests.
struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(rng() % n); }
  std::size_t between(std::size_t lo, std::size_t hi) { return lo + below(hi - lo + 1); }
  bool coin(double p = 0.5) { return static_cast<double>(rng() >> 11) * 0x1.0p-53 < p; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53; }
  template <class T>
  const T& pick(const std::vector<T>& v) { return v[below(v.size())]; }
};

}  // namespace oracle
