#pragma once
// Local multi-label property classifier: one logistic output per relation on
// top of TF-IDF entity features, fitted by full-batch gradient descent on the
// binary cross-entropy from property.hpp. Stands in for a fine-tuned language
// model so the whole pipeline runs offline.

#include <cstdint>
#include <span>
#include <vector>

#include "kgic/property.hpp"

namespace kgic {

struct LinearClassifier {
    std::size_t num_features = 0;
    std::size_t num_labels = 0;
    std::vector<double> weights;  // num_features x num_labels, row-major
    std::vector<double> bias;     // num_labels

    PropertyScores predict(const SparseVector& x) const;
    ScoreMatrix predict(std::span<const SparseVector> xs) const;
};

struct LinearTrainOptions {
    std::size_t epochs = 200;
    double learning_rate = 1.0;
    std::uint64_t seed = 0;
    double init_scale = 0.01;  // weights start uniform in [-init_scale, init_scale]
};

struct LinearTrainResult {
    LinearClassifier model;
    std::vector<double> loss_history;  // loss before each epoch's update
};

// Throws DivergenceError when the loss becomes non-finite.
LinearTrainResult train_linear_classifier(std::span<const SparseVector> features, const BinaryMatrix& gold,
                                          std::size_t num_features, const LinearTrainOptions& options);

struct LinearPredictorOptions {
    LinearTrainOptions train;
    TextMask mask;
};

// Fits on the train-split heads (gold = their train property rows).
class LinearPredictor final : public PropertyPredictor {
public:
    LinearPredictor(const KnowledgeGraph& graph, TripleSubset train, LinearPredictorOptions options = {});
    PropertyScores scores(EntityId entity) override;
    std::string name() const override { return "linear"; }
    std::uint64_t train_fingerprint() const override { return fingerprint_; }
    const LinearTrainResult& training() const { return result_; }

private:
    TfidfModel tfidf_;
    LinearTrainResult result_;
    std::uint64_t fingerprint_;
};

}  // namespace kgic
