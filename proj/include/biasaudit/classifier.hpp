#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "biasaudit/core.hpp"

namespace biasaudit {

// Training data in dense row-major form. Labels here are the (possibly
// poisoned) training view; the cohort's true labels are untouched.
struct LabeledSet {
    std::size_t dim = 0;
    std::vector<double> x; // size() == n * dim
    std::vector<int> y;

    std::size_t size() const { return y.size(); }
    std::span<const double> row(std::size_t i) const {
        return {x.data() + i * dim, dim};
    }

    static LabeledSet from_cohort(const Cohort& cohort,
                                  std::span<const std::size_t> indices,
                                  std::span<const int> labels);
};

enum class LearnerKind : std::uint8_t { Logistic, Mlp };

struct TrainerConfig {
    LearnerKind learner = LearnerKind::Logistic;
    std::size_t hidden_width = 16;     // MLP only
    std::size_t max_epochs = 300;
    std::size_t batch_size = 0;        // 0 = full batch
    double learning_rate = 1.0;
    double lr_decay = 0.995;           // multiplicative per epoch, in (0,1]
    std::size_t patience = 25;         // epochs without val improvement before stop
    std::uint64_t seed = 0;

    void validate() const; // throws std::invalid_argument
};

// Training aborted because gradient descent cannot start or went non-finite.
struct DegenerateTraining : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TrainingFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EpochLoss {
    double train_bce = 0.0;
    double val_bce = 0.0;
};

// Snapshot of the best-validation model. Logistic uses w1 (dim weights) and
// b2 (bias); the MLP adds a hidden layer: w1 is hidden x dim row-major, b1
// the hidden biases, w2 the output weights.
struct ScoreModel {
    LearnerKind kind = LearnerKind::Logistic;
    std::size_t dim = 0;
    std::size_t hidden = 0;
    std::vector<double> w1;
    std::vector<double> b1;
    std::vector<double> w2;
    double b2 = 0.0;
    std::vector<EpochLoss> history; // one entry per completed epoch
    std::size_t best_epoch = 0;     // 1-based epoch of the returned snapshot
};

// Gradient descent on binary cross-entropy, deterministic given the config
// seed. Early stopping tracks validation BCE; the returned model is the best
// snapshot, not the last epoch. Throws DegenerateTraining when the training
// labels are single-class (or sets are empty), TrainingFailure when the loss
// goes non-finite.
ScoreModel train(const LabeledSet& train_set, const LabeledSet& val_set,
                 const TrainerConfig& config);

double score(const ScoreModel& model, std::span<const double> features);
std::vector<double> score_all(const ScoreModel& model, const LabeledSet& set);

// Mean binary cross-entropy of probability scores against labels, scores
// clamped to [1e-12, 1 - 1e-12].
double bce_loss(std::span<const double> scores, std::span<const int> labels);

// Logistic loss and analytic gradient at explicit parameters, exposed so the
// gradient can be checked against finite differences.
double logistic_bce_at(std::span<const double> w, double b, const LabeledSet& set);
void logistic_bce_gradient(std::span<const double> w, double b, const LabeledSet& set,
                           std::span<double> grad_w, double& grad_b);

nlohmann::json model_to_json(const ScoreModel& model);
ScoreModel model_from_json(const nlohmann::json& j);

} // namespace biasaudit
