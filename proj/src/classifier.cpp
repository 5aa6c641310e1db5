#include "biasaudit/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "biasaudit/rng.hpp"

namespace biasaudit {

LabeledSet LabeledSet::from_cohort(const Cohort& cohort,
                                   std::span<const std::size_t> indices,
                                   std::span<const int> labels) {
    if (labels.size() != cohort.size())
        throw std::invalid_argument("labels must cover the whole cohort");
    LabeledSet set;
    set.dim = cohort.feature_dim;
    set.x.reserve(indices.size() * set.dim);
    set.y.reserve(indices.size());
    for (std::size_t i : indices) {
        const Sample& s = cohort.samples.at(i);
        set.x.insert(set.x.end(), s.features.begin(), s.features.end());
        set.y.push_back(labels[i]);
    }
    return set;
}

void TrainerConfig::validate() const {
    if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (!(lr_decay > 0.0) || lr_decay > 1.0)
        throw std::invalid_argument("lr_decay must be in (0,1]");
    if (learner == LearnerKind::Mlp && hidden_width < 1)
        throw std::invalid_argument("hidden_width must be >= 1");
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// BCE from the logit, stable for large |z|: max(z,0) - y*z + log1p(exp(-|z|)).
double bce_from_logit(double z, int y) {
    return std::max(z, 0.0) - static_cast<double>(y) * z + std::log1p(std::exp(-std::abs(z)));
}

struct Params {
    std::vector<double> w1, b1, w2;
    double b2 = 0.0;
};

double mlp_logit(const Params& p, std::span<const double> x, std::size_t hidden,
                 std::size_t dim, std::vector<double>& h_buf) {
    h_buf.resize(hidden);
    double z = p.b2;
    for (std::size_t j = 0; j < hidden; ++j) {
        double a = p.b1[j];
        const double* wrow = p.w1.data() + j * dim;
        for (std::size_t d = 0; d < dim; ++d) a += wrow[d] * x[d];
        h_buf[j] = std::tanh(a);
        z += p.w2[j] * h_buf[j];
    }
    return z;
}

double linear_logit(const Params& p, std::span<const double> x) {
    double z = p.b2;
    for (std::size_t d = 0; d < x.size(); ++d) z += p.w1[d] * x[d];
    return z;
}

} // namespace

ScoreModel train(const LabeledSet& train_set, const LabeledSet& val_set,
                 const TrainerConfig& config) {
    config.validate();
    if (train_set.size() == 0 || val_set.size() == 0)
        throw DegenerateTraining("train and validation sets must be non-empty");
    if (train_set.dim != val_set.dim)
        throw std::invalid_argument("train/val feature dimensions differ");
    bool has_pos = std::find(train_set.y.begin(), train_set.y.end(), 1) != train_set.y.end();
    bool has_neg = std::find(train_set.y.begin(), train_set.y.end(), 0) != train_set.y.end();
    if (!has_pos || !has_neg)
        throw DegenerateTraining("training labels are single-class");

    const std::size_t dim = train_set.dim;
    const std::size_t n = train_set.size();
    const bool mlp = config.learner == LearnerKind::Mlp;
    const std::size_t hidden = mlp ? config.hidden_width : 0;

    Rng rng(config.seed);
    Params p;
    if (mlp) {
        // Uniform fan-in init; logistic starts at exactly zero so that
        // training on complemented labels mirrors sign-for-sign.
        p.w1.resize(hidden * dim);
        p.b1.assign(hidden, 0.0);
        p.w2.resize(hidden);
        double a1 = 1.0 / std::sqrt(static_cast<double>(dim));
        for (double& w : p.w1) w = (2.0 * rng.uniform01() - 1.0) * a1;
        double a2 = 1.0 / std::sqrt(static_cast<double>(hidden));
        for (double& w : p.w2) w = (2.0 * rng.uniform01() - 1.0) * a2;
    } else {
        p.w1.assign(dim, 0.0);
    }

    Params grad;
    grad.w1.assign(p.w1.size(), 0.0);
    grad.b1.assign(p.b1.size(), 0.0);
    grad.w2.assign(p.w2.size(), 0.0);

    std::vector<double> h_buf;
    auto logit_of = [&](std::span<const double> x) {
        return mlp ? mlp_logit(p, x, hidden, dim, h_buf) : linear_logit(p, x);
    };

    auto full_bce = [&](const LabeledSet& set) {
        double total = 0.0;
        for (std::size_t i = 0; i < set.size(); ++i)
            total += bce_from_logit(logit_of(set.row(i)), set.y[i]);
        return total / static_cast<double>(set.size());
    };

    // One gradient step on the given index slice.
    auto step = [&](std::span<const std::size_t> batch, double lr) {
        std::fill(grad.w1.begin(), grad.w1.end(), 0.0);
        std::fill(grad.b1.begin(), grad.b1.end(), 0.0);
        std::fill(grad.w2.begin(), grad.w2.end(), 0.0);
        double grad_b2 = 0.0;
        const double inv = 1.0 / static_cast<double>(batch.size());
        for (std::size_t i : batch) {
            auto x = train_set.row(i);
            double err;
            if (mlp) {
                double z = mlp_logit(p, x, hidden, dim, h_buf);
                err = (sigmoid(z) - static_cast<double>(train_set.y[i])) * inv;
                for (std::size_t j = 0; j < hidden; ++j) {
                    grad.w2[j] += err * h_buf[j];
                    double back = err * p.w2[j] * (1.0 - h_buf[j] * h_buf[j]);
                    grad.b1[j] += back;
                    double* grow = grad.w1.data() + j * dim;
                    for (std::size_t d = 0; d < dim; ++d) grow[d] += back * x[d];
                }
                grad_b2 += err;
            } else {
                double z = linear_logit(p, x);
                err = (sigmoid(z) - static_cast<double>(train_set.y[i])) * inv;
                for (std::size_t d = 0; d < dim; ++d) grad.w1[d] += err * x[d];
                grad_b2 += err;
            }
        }
        for (std::size_t k = 0; k < p.w1.size(); ++k) p.w1[k] -= lr * grad.w1[k];
        for (std::size_t k = 0; k < p.b1.size(); ++k) p.b1[k] -= lr * grad.b1[k];
        for (std::size_t k = 0; k < p.w2.size(); ++k) p.w2[k] -= lr * grad.w2[k];
        p.b2 -= lr * grad_b2;
    };

    std::vector<std::size_t> index(n);
    std::iota(index.begin(), index.end(), 0);

    ScoreModel best;
    best.kind = config.learner;
    best.dim = dim;
    best.hidden = hidden;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    std::vector<EpochLoss> history;

    double lr = config.learning_rate;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        if (config.batch_size == 0) {
            step(index, lr);
        } else {
            rng.shuffle(index);
            for (std::size_t start = 0; start < n; start += config.batch_size) {
                std::size_t len = std::min(config.batch_size, n - start);
                step(std::span<const std::size_t>(index.data() + start, len), lr);
            }
        }
        lr *= config.lr_decay;

        EpochLoss el{full_bce(train_set), full_bce(val_set)};
        if (!std::isfinite(el.train_bce) || !std::isfinite(el.val_bce))
            throw TrainingFailure("loss went non-finite at epoch " + std::to_string(epoch));
        history.push_back(el);

        if (el.val_bce < best_val) {
            best_val = el.val_bce;
            best.w1 = p.w1;
            best.b1 = p.b1;
            best.w2 = p.w2;
            best.b2 = p.b2;
            best.best_epoch = epoch;
            since_best = 0;
        } else {
            ++since_best;
            if (since_best > config.patience) break;
        }
    }
    best.history = std::move(history);
    return best;
}

double score(const ScoreModel& model, std::span<const double> features) {
    if (features.size() != model.dim)
        throw std::invalid_argument("feature dimension mismatch");
    double z;
    if (model.kind == LearnerKind::Mlp) {
        z = model.b2;
        for (std::size_t j = 0; j < model.hidden; ++j) {
            double a = model.b1[j];
            const double* wrow = model.w1.data() + j * model.dim;
            for (std::size_t d = 0; d < model.dim; ++d) a += wrow[d] * features[d];
            z += model.w2[j] * std::tanh(a);
        }
    } else {
        z = model.b2;
        for (std::size_t d = 0; d < model.dim; ++d) z += model.w1[d] * features[d];
    }
    return sigmoid(z);
}

std::vector<double> score_all(const ScoreModel& model, const LabeledSet& set) {
    std::vector<double> out(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) out[i] = score(model, set.row(i));
    return out;
}

double bce_loss(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("scores and labels must have equal length");
    if (scores.empty()) throw std::invalid_argument("bce_loss on empty input");
    constexpr double kEps = 1e-12;
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        double s = std::clamp(scores[i], kEps, 1.0 - kEps);
        total += labels[i] == 1 ? -std::log(s) : -std::log1p(-s);
    }
    return total / static_cast<double>(scores.size());
}

double logistic_bce_at(std::span<const double> w, double b, const LabeledSet& set) {
    if (w.size() != set.dim) throw std::invalid_argument("weight dimension mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        auto x = set.row(i);
        double z = b;
        for (std::size_t d = 0; d < set.dim; ++d) z += w[d] * x[d];
        total += bce_from_logit(z, set.y[i]);
    }
    return total / static_cast<double>(set.size());
}

void logistic_bce_gradient(std::span<const double> w, double b, const LabeledSet& set,
                           std::span<double> grad_w, double& grad_b) {
    if (w.size() != set.dim || grad_w.size() != set.dim)
        throw std::invalid_argument("weight dimension mismatch");
    std::fill(grad_w.begin(), grad_w.end(), 0.0);
    grad_b = 0.0;
    const double inv = 1.0 / static_cast<double>(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        auto x = set.row(i);
        double z = b;
        for (std::size_t d = 0; d < set.dim; ++d) z += w[d] * x[d];
        double err = (sigmoid(z) - static_cast<double>(set.y[i])) * inv;
        for (std::size_t d = 0; d < set.dim; ++d) grad_w[d] += err * x[d];
        grad_b += err;
    }
}

nlohmann::json model_to_json(const ScoreModel& model) {
    nlohmann::json history = nlohmann::json::array();
    for (const EpochLoss& el : model.history)
        history.push_back({{"train_bce", el.train_bce}, {"val_bce", el.val_bce}});
    return {{"kind", model.kind == LearnerKind::Mlp ? "mlp" : "logistic"},
            {"dim", model.dim},
            {"hidden", model.hidden},
            {"w1", model.w1},
            {"b1", model.b1},
            {"w2", model.w2},
            {"b2", model.b2},
            {"best_epoch", model.best_epoch},
            {"history", std::move(history)}};
}

ScoreModel model_from_json(const nlohmann::json& j) {
    ScoreModel m;
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "mlp")
        m.kind = LearnerKind::Mlp;
    else if (kind == "logistic")
        m.kind = LearnerKind::Logistic;
    else
        throw std::invalid_argument("bad model kind: " + kind);
    m.dim = j.at("dim").get<std::size_t>();
    m.hidden = j.at("hidden").get<std::size_t>();
    m.w1 = j.at("w1").get<std::vector<double>>();
    m.b1 = j.at("b1").get<std::vector<double>>();
    m.w2 = j.at("w2").get<std::vector<double>>();
    m.b2 = j.at("b2").get<double>();
    m.best_epoch = j.at("best_epoch").get<std::size_t>();
    for (const auto& je : j.at("history"))
        m.history.push_back({je.at("train_bce").get<double>(), je.at("val_bce").get<double>()});
    return m;
}

} // namespace biasaudit
