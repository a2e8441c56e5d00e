#include "kgic/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kgic/error.hpp"
#include "kgic/ingest.hpp"
#include "kgic/rng.hpp"

namespace kgic {

namespace {
double sigmoid(double z) {
    return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}
}  // namespace

PropertyScores LinearClassifier::predict(const SparseVector& x) const {
    PropertyScores z(bias);
    for (const auto& [f, v] : x.entries) {
        if (f >= num_features) continue;
        const double* w = weights.data() + std::size_t{f} * num_labels;
        for (std::size_t c = 0; c < num_labels; ++c) z[c] += v * w[c];
    }
    for (auto& v : z) v = sigmoid(v);
    return z;
}

ScoreMatrix LinearClassifier::predict(std::span<const SparseVector> xs) const {
    ScoreMatrix out(xs.size(), num_labels);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const auto p = predict(xs[i]);
        std::copy(p.begin(), p.end(), out.row(i).begin());
    }
    return out;
}

LinearTrainResult train_linear_classifier(std::span<const SparseVector> features, const BinaryMatrix& gold,
                                          std::size_t num_features, const LinearTrainOptions& options) {
    if (features.size() != gold.rows)
        throw Error("train_linear_classifier: " + std::to_string(features.size()) + " feature rows vs " +
                    std::to_string(gold.rows) + " gold rows");
    LinearTrainResult result;
    auto& model = result.model;
    model.num_features = num_features;
    model.num_labels = gold.cols;
    model.weights.resize(num_features * gold.cols);
    model.bias.assign(gold.cols, 0.0);
    Rng rng(options.seed);
    for (auto& w : model.weights) w = rng.uniform(-options.init_scale, options.init_scale);

    const double n = static_cast<double>(std::max<std::size_t>(features.size(), 1));
    std::vector<double> grad_w(model.weights.size());
    std::vector<double> grad_b(gold.cols);
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        const auto pred = model.predict(features);
        const double loss = bce_loss(pred, gold);
        if (!std::isfinite(loss)) {
            std::ostringstream msg;
            msg << "linear classifier diverged at epoch " << epoch << " (loss " << loss << ", lr "
                << options.learning_rate << ")";
            throw DivergenceError(msg.str());
        }
        result.loss_history.push_back(loss);
        if (options.learning_rate == 0.0) continue;

        std::fill(grad_w.begin(), grad_w.end(), 0.0);
        std::fill(grad_b.begin(), grad_b.end(), 0.0);
        for (std::size_t i = 0; i < features.size(); ++i) {
            for (std::size_t c = 0; c < gold.cols; ++c) {
                // dL/dz for a sigmoid output under BCE
                const double dz = (pred.at(i, c) - gold.at(i, c)) / n;
                grad_b[c] += dz;
                for (const auto& [f, v] : features[i].entries)
                    if (f < num_features) grad_w[std::size_t{f} * gold.cols + c] += v * dz;
            }
        }
        for (std::size_t k = 0; k < model.weights.size(); ++k) model.weights[k] -= options.learning_rate * grad_w[k];
        for (std::size_t c = 0; c < gold.cols; ++c) model.bias[c] -= options.learning_rate * grad_b[c];
        const auto finite = [](double v) { return std::isfinite(v); };
        if (!std::all_of(model.weights.begin(), model.weights.end(), finite) ||
            !std::all_of(model.bias.begin(), model.bias.end(), finite)) {
            std::ostringstream msg;
            msg << "linear classifier diverged at epoch " << epoch << " (non-finite weights, lr "
                << options.learning_rate << ")";
            throw DivergenceError(msg.str());
        }
    }
    return result;
}

namespace {
std::vector<SparseVector> head_features(const TfidfModel& tfidf, std::span<const EntityId> heads) {
    std::vector<SparseVector> xs;
    xs.reserve(heads.size());
    for (const auto h : heads) xs.push_back(tfidf.document(index(h)));
    return xs;
}
}  // namespace

LinearPredictor::LinearPredictor(const KnowledgeGraph& graph, TripleSubset train, LinearPredictorOptions options)
    : tfidf_(tfidf_features(graph, options.mask)), fingerprint_(split_fingerprint(train)) {
    const auto heads = distinct_heads(graph, train);
    const auto xs = head_features(tfidf_, heads);
    result_ = train_linear_classifier(xs, gold_rows(graph, heads, train), tfidf_.num_terms(), options.train);
}

PropertyScores LinearPredictor::scores(EntityId entity) {
    return result_.model.predict(tfidf_.document(index(entity)));
}

}  // namespace kgic
