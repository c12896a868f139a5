#pragma once
// Bag-of-words multinomial logistic regression trained by mini-batch
// gradient descent.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cnseg/core.hpp"

namespace cnseg::logreg {

class BowVocabulary {
 public:
  BowVocabulary() = default;
  // Terms occurring at least `min_count` times across `texts`.
  static BowVocabulary build(std::span<const std::string> texts, std::size_t min_count = 2,
                             bool lowercase = true);
  static BowVocabulary from_terms(std::vector<std::string> terms, std::size_t min_count,
                                  bool lowercase);

  std::size_t size() const { return terms_.size(); }
  const std::vector<std::string>& terms() const { return terms_; }
  std::size_t min_count() const { return min_count_; }
  bool lowercased() const { return lowercase_; }
  // -1 when the term is out of vocabulary.
  long index_of(const std::string& term) const;
  std::string normalize(std::string_view token) const;

 private:
  std::vector<std::string> terms_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t min_count_ = 2;
  bool lowercase_ = true;
};

// Sparse in-vocabulary counts sorted by feature index; the bias feature is
// implicit and always 1.
struct SparseFeatures {
  std::vector<std::pair<std::size_t, double>> counts;
};

SparseFeatures featurize(const BowVocabulary& vocab, std::string_view sentence);

struct TrainConfig {
  double learning_rate = 0.5;
  std::size_t epochs = 60;
  double l2_lambda = 1e-4;
  std::size_t batch_size = 32;  // 0 = full batch
  std::uint64_t seed = 13;
  std::size_t min_count = 2;

  void validate() const;
};

struct Example {
  SparseFeatures features;
  std::size_t label = 0;
};

// Row-major C x (V + 1) weights; the last column is the bias.
struct WeightMatrix {
  std::size_t classes = 0;
  std::size_t features = 0;  // V, excluding bias
  std::vector<double> values;

  WeightMatrix() = default;
  WeightMatrix(std::size_t c, std::size_t v) : classes(c), features(v), values(c * (v + 1), 0.0) {}
  double& at(std::size_t c, std::size_t f) { return values[c * (features + 1) + f]; }
  double at(std::size_t c, std::size_t f) const { return values[c * (features + 1) + f]; }
  std::size_t stride() const { return features + 1; }
};

// Softmax of W x for one example.
std::vector<double> class_probabilities(const WeightMatrix& w, const SparseFeatures& x);

// Mean softmax cross-entropy plus (lambda / 2) * ||W||^2 over `batch`, and
// its gradient with respect to every weight.
double objective(const WeightMatrix& w, std::span<const Example> batch, double l2_lambda,
                 WeightMatrix* gradient);

struct TrainingReport {
  std::vector<double> train_loss;       // full training objective after each epoch
  std::vector<double> validation_loss;  // empty without a validation set
  std::size_t best_epoch = 0;           // 1-based epoch whose weights were kept
};

class LogRegModel {
 public:
  LogRegModel(WeightMatrix weights, BowVocabulary vocab, std::vector<std::string> labels,
              TrainConfig config);

  struct Prediction {
    std::string label;
    std::vector<double> probabilities;
  };

  // Argmax of softmax(W x); ties go to the lowest label index.
  Prediction predict(std::string_view sentence) const;

  const WeightMatrix& weights() const { return weights_; }
  const BowVocabulary& vocabulary() const { return vocab_; }
  const std::vector<std::string>& labels() const { return labels_; }
  const TrainConfig& config() const { return config_; }

  void save(const std::filesystem::path& path) const;
  std::string serialize() const;
  static LogRegModel load(const std::filesystem::path& path);
  static LogRegModel deserialize(std::string_view contents);

 private:
  WeightMatrix weights_;
  BowVocabulary vocab_;
  std::vector<std::string> labels_;
  TrainConfig config_;
};

struct TrainedModel {
  LogRegModel model;
  TrainingReport report;
};

// Labels are the distinct training labels in ontology order. When
// `validation` is non-empty the epoch with the lowest validation loss is kept.
TrainedModel train(std::span<const LabeledSentence> training, const LabelOntology& ontology,
                   const TrainConfig& config, std::span<const LabeledSentence> validation = {});

}  // namespace cnseg::logreg
