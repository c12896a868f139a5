#include "cnseg/logreg.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "cnseg/corpus.hpp"
#include "cnseg/error.hpp"
#include "cnseg/jsonl.hpp"

namespace cnseg::logreg {

std::string BowVocabulary::normalize(std::string_view token) const {
  std::string out(token);
  if (lowercase_)
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

BowVocabulary BowVocabulary::build(std::span<const std::string> texts, std::size_t min_count,
                                   bool lowercase) {
  BowVocabulary probe;
  probe.lowercase_ = lowercase;
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts)
    for (const auto& tok : tokenize(text)) ++counts[probe.normalize(tok.text)];
  std::vector<std::string> terms;
  for (const auto& [term, count] : counts)
    if (count >= min_count) terms.push_back(term);
  return from_terms(std::move(terms), min_count, lowercase);
}

BowVocabulary BowVocabulary::from_terms(std::vector<std::string> terms, std::size_t min_count,
                                        bool lowercase) {
  BowVocabulary vocab;
  vocab.min_count_ = min_count;
  vocab.lowercase_ = lowercase;
  for (auto& term : terms) {
    if (vocab.index_.emplace(term, vocab.terms_.size()).second) vocab.terms_.push_back(std::move(term));
  }
  return vocab;
}

long BowVocabulary::index_of(const std::string& term) const {
  auto it = index_.find(term);
  return it == index_.end() ? -1 : static_cast<long>(it->second);
}

SparseFeatures featurize(const BowVocabulary& vocab, std::string_view sentence) {
  std::map<std::size_t, double> counts;
  for (const auto& tok : tokenize(sentence)) {
    const long idx = vocab.index_of(vocab.normalize(tok.text));
    if (idx >= 0) counts[static_cast<std::size_t>(idx)] += 1.0;
  }
  return SparseFeatures{{counts.begin(), counts.end()}};
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw Error(Errc::InvalidArgument, "learning_rate must be finite and non-negative");
  if (epochs < 1) throw Error(Errc::InvalidArgument, "epochs must be at least 1");
  if (!(l2_lambda >= 0.0)) throw Error(Errc::InvalidArgument, "l2_lambda must be non-negative");
}

namespace {

std::vector<double> scores(const WeightMatrix& w, const SparseFeatures& x) {
  std::vector<double> z(w.classes);
  for (std::size_t c = 0; c < w.classes; ++c) {
    double s = w.at(c, w.features);  // bias
    for (const auto& [f, v] : x.counts) s += w.at(c, f) * v;
    z[c] = s;
  }
  return z;
}

void softmax_in_place(std::vector<double>& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

}  // namespace

std::vector<double> class_probabilities(const WeightMatrix& w, const SparseFeatures& x) {
  auto z = scores(w, x);
  softmax_in_place(z);
  return z;
}

double objective(const WeightMatrix& w, std::span<const Example> batch, double l2_lambda,
                 WeightMatrix* gradient) {
  if (gradient) *gradient = WeightMatrix(w.classes, w.features);
  double loss = 0.0;
  const double inv_n = batch.empty() ? 0.0 : 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    auto z = scores(w, ex.features);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    const double log_norm = mx + std::log(sum);
    loss += log_norm - z[ex.label];
    if (!gradient) continue;
    for (std::size_t c = 0; c < w.classes; ++c) {
      const double delta = (std::exp(z[c] - log_norm) - (c == ex.label ? 1.0 : 0.0)) * inv_n;
      for (const auto& [f, v] : ex.features.counts) gradient->at(c, f) += delta * v;
      gradient->at(c, w.features) += delta;
    }
  }
  loss *= inv_n;
  double sq = 0.0;
  for (double v : w.values) sq += v * v;
  loss += 0.5 * l2_lambda * sq;
  if (gradient)
    for (std::size_t i = 0; i < w.values.size(); ++i) gradient->values[i] += l2_lambda * w.values[i];
  return loss;
}

LogRegModel::LogRegModel(WeightMatrix weights, BowVocabulary vocab, std::vector<std::string> labels,
                         TrainConfig config)
    : weights_(std::move(weights)),
      vocab_(std::move(vocab)),
      labels_(std::move(labels)),
      config_(config) {
  if (labels_.empty()) throw Error(Errc::InvalidArgument, "model without labels");
  if (weights_.classes != labels_.size() || weights_.features != vocab_.size() ||
      weights_.values.size() != weights_.classes * weights_.stride())
    throw Error(Errc::InvalidArgument, "weight matrix shape does not match labels/vocabulary");
  for (double v : weights_.values)
    if (!std::isfinite(v)) throw Error(Errc::InvalidArgument, "non-finite weight");
}

LogRegModel::Prediction LogRegModel::predict(std::string_view sentence) const {
  Prediction p;
  p.probabilities = class_probabilities(weights_, featurize(vocab_, sentence));
  // max_element returns the first maximum, i.e. the lowest label index.
  const auto best = std::max_element(p.probabilities.begin(), p.probabilities.end());
  p.label = labels_[static_cast<std::size_t>(best - p.probabilities.begin())];
  return p;
}

namespace {

constexpr std::string_view kMagic = "cnseg-logreg";
constexpr int kFormatVersion = 1;

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error(Errc::MalformedRecord, "bad number '" + std::string(s) + "' in model file");
  return v;
}

}  // namespace

std::string LogRegModel::serialize() const {
  std::ostringstream out;
  out << kMagic << ' ' << kFormatVersion << '\n';
  out << "config " << format_double(config_.learning_rate) << ' ' << config_.epochs << ' '
      << format_double(config_.l2_lambda) << ' ' << config_.batch_size << ' ' << config_.seed << ' '
      << config_.min_count << '\n';
  out << "labels " << labels_.size() << '\n';
  for (const auto& l : labels_) out << l << '\n';
  out << "vocab " << vocab_.size() << ' ' << vocab_.min_count() << ' ' << (vocab_.lowercased() ? 1 : 0)
      << '\n';
  for (const auto& t : vocab_.terms()) out << t << '\n';
  out << "weights " << weights_.classes << ' ' << weights_.stride() << '\n';
  for (std::size_t c = 0; c < weights_.classes; ++c) {
    for (std::size_t f = 0; f < weights_.stride(); ++f) {
      if (f) out << ' ';
      out << format_double(weights_.at(c, f));
    }
    out << '\n';
  }
  return out.str();
}

void LogRegModel::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

LogRegModel LogRegModel::deserialize(std::string_view contents) {
  std::istringstream in{std::string(contents)};
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> std::string& {
    if (!std::getline(in, line)) throw Error(Errc::MalformedRecord, "truncated model file", line_no + 1);
    ++line_no;
    return line;
  };
  auto expect = [&](std::string_view keyword) {
    std::istringstream ls(next_line());
    std::string word;
    ls >> word;
    if (word != keyword)
      throw Error(Errc::MalformedRecord, "expected '" + std::string(keyword) + "'", line_no);
    return ls.str().substr(word.size());
  };

  {
    std::istringstream ls(next_line());
    std::string magic;
    int version = 0;
    ls >> magic >> version;
    if (magic != kMagic || version != kFormatVersion)
      throw Error(Errc::MalformedRecord, "not a version 1 model file", line_no);
  }
  TrainConfig config;
  {
    std::istringstream ls(expect("config"));
    std::string lr, l2;
    ls >> lr >> config.epochs >> l2 >> config.batch_size >> config.seed >> config.min_count;
    if (!ls) throw Error(Errc::MalformedRecord, "bad config line", line_no);
    config.learning_rate = parse_double(lr);
    config.l2_lambda = parse_double(l2);
  }
  std::size_t n_labels = 0;
  {
    std::istringstream ls(expect("labels"));
    if (!(ls >> n_labels)) throw Error(Errc::MalformedRecord, "bad label count", line_no);
  }
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < n_labels; ++i) labels.push_back(next_line());
  std::size_t v = 0, min_count = 0;
  int lower = 1;
  {
    std::istringstream ls(expect("vocab"));
    if (!(ls >> v >> min_count >> lower)) throw Error(Errc::MalformedRecord, "bad vocab line", line_no);
  }
  std::vector<std::string> terms;
  for (std::size_t i = 0; i < v; ++i) terms.push_back(next_line());
  std::size_t rows = 0, cols = 0;
  {
    std::istringstream ls(expect("weights"));
    if (!(ls >> rows >> cols) || rows != n_labels || cols != v + 1)
      throw Error(Errc::MalformedRecord, "weight shape does not match header", line_no);
  }
  WeightMatrix w(rows, v);
  for (std::size_t c = 0; c < rows; ++c) {
    std::istringstream ls(next_line());
    std::string cell;
    for (std::size_t f = 0; f < cols; ++f) {
      if (!(ls >> cell)) throw Error(Errc::MalformedRecord, "short weight row", line_no);
      w.at(c, f) = parse_double(cell);
    }
  }
  return LogRegModel(std::move(w), BowVocabulary::from_terms(std::move(terms), min_count, lower != 0),
                     std::move(labels), config);
}

LogRegModel LogRegModel::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

namespace {

std::vector<Example> make_examples(std::span<const LabeledSentence> sentences, const BowVocabulary& vocab,
                                   const std::map<std::string, std::size_t>& label_index) {
  std::vector<Example> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) {
    auto it = label_index.find(s.label);
    if (it == label_index.end()) continue;  // validation labels unseen in training
    out.push_back(Example{featurize(vocab, s.text), it->second});
  }
  return out;
}

}  // namespace

TrainedModel train(std::span<const LabeledSentence> training, const LabelOntology& ontology,
                   const TrainConfig& config, std::span<const LabeledSentence> validation) {
  config.validate();
  std::set<std::string> seen;
  for (const auto& s : training) {
    if (!ontology.contains(s.label)) throw Error(Errc::UnknownLabel, s.label + " is not in the ontology");
    seen.insert(s.label);
  }
  if (seen.size() < 2)
    throw Error(Errc::DegenerateFold, "training fold has " + std::to_string(seen.size()) + " distinct labels");

  std::vector<std::string> labels;
  std::map<std::string, std::size_t> label_index;
  for (const auto& l : ontology.labels()) {
    if (!seen.count(l)) continue;
    label_index[l] = labels.size();
    labels.push_back(l);
  }

  std::vector<std::string> texts;
  texts.reserve(training.size());
  for (const auto& s : training) texts.push_back(s.text);
  BowVocabulary vocab = BowVocabulary::build(texts, config.min_count, true);

  const auto train_set = make_examples(training, vocab, label_index);
  const auto val_set = make_examples(validation, vocab, label_index);

  WeightMatrix w(labels.size(), vocab.size());
  WeightMatrix grad;
  WeightMatrix best = w;
  TrainingReport report;
  double best_val = std::numeric_limits<double>::infinity();

  const std::size_t batch = config.batch_size == 0 ? train_set.size() : config.batch_size;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Example> minibatch;
  std::uint64_t rng = config.seed;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.batch_size != 0)
      for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[bounded_draw(rng, i + 1)]);
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t end = std::min(order.size(), begin + batch);
      minibatch.clear();
      for (std::size_t i = begin; i < end; ++i) minibatch.push_back(train_set[order[i]]);
      objective(w, minibatch, config.l2_lambda, &grad);
      for (std::size_t i = 0; i < w.values.size(); ++i) w.values[i] -= config.learning_rate * grad.values[i];
    }
    report.train_loss.push_back(objective(w, train_set, config.l2_lambda, nullptr));
    if (!val_set.empty()) {
      const double vl = objective(w, val_set, 0.0, nullptr);
      report.validation_loss.push_back(vl);
      if (vl < best_val) {
        best_val = vl;
        best = w;
        report.best_epoch = epoch;
      }
    }
  }
  if (val_set.empty()) {
    best = std::move(w);
    report.best_epoch = config.epochs;
  }
  return TrainedModel{LogRegModel(std::move(best), std::move(vocab), std::move(labels), config),
                      std::move(report)};
}

}  // namespace cnseg::logreg
