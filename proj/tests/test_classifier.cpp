#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "biasaudit/classifier.hpp"
#include "biasaudit/core.hpp"
#include "biasaudit/synthgen.hpp"

using namespace biasaudit;

static LabeledSet blob_set(std::uint64_t seed, std::size_t n, double separation) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    LabeledSet set;
    set.dim = 3;
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(rng() % 2);
        const double shift = label == 1 ? separation : -separation;
        set.x.push_back(shift + noise(rng));
        set.x.push_back(-shift * 0.5 + noise(rng));
        set.x.push_back(noise(rng));
        set.y.push_back(label);
    }
    return set;
}

TEST_CASE("labeled sets project cohort rows with override labels") {
    CohortSpec spec = default_cohort_spec(2);
    for (auto& g : spec.groups) g.count = std::max<std::size_t>(1, g.count / 100);
    Cohort c = generate_cohort(spec);

    std::vector<std::size_t> idx{0, 2, 5};
    std::vector<int> labels(c.size(), 0);
    labels[2] = 1;
    LabeledSet set = LabeledSet::from_cohort(c, idx, labels);
    REQUIRE(set.size() == 3);
    CHECK(set.dim == c.feature_dim);
    CHECK(set.y == std::vector<int>{0, 1, 0});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        auto row = set.row(r);
        for (std::size_t d = 0; d < set.dim; ++d)
            CHECK(row[d] == c.samples[idx[r]].features[d]);
    }
}

TEST_CASE("bce loss on hand-checked values") {
    std::vector<double> s{0.9, 0.1};
    std::vector<int> y{1, 0};
    CHECK(bce_loss(s, y) == doctest::Approx(-std::log(0.9)).epsilon(1e-14));

    // Perfect confident scores hit the clamp, not log(0).
    std::vector<double> perfect{1.0, 0.0};
    CHECK(bce_loss(perfect, y) ==
          doctest::Approx(-std::log(1.0 - 1e-12)).epsilon(1e-6));
    std::vector<double> wrong{0.0, 1.0};
    // The upper clamp lands at 1 - 1e-12, whose distance from 1 rounds to
    // 9007 ulps of 0.5, so the two terms differ slightly past the 5th digit.
    double wrong_expected =
        0.5 * (-std::log(1e-12) - std::log(1.0 - (1.0 - 1e-12)));
    CHECK(bce_loss(wrong, y) == doctest::Approx(wrong_expected).epsilon(1e-14));

    std::vector<double> half{0.5, 0.5};
    CHECK(bce_loss(half, y) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("logistic gradient matches finite differences") {
    LabeledSet set = blob_set(5, 40, 0.8);
    std::vector<double> w{0.3, -0.2, 0.1};
    const double b = -0.05;

    std::vector<double> grad(3, 0.0);
    double grad_b = 0.0;
    logistic_bce_gradient(w, b, set, grad, grad_b);

    const double h = 1e-6;
    for (std::size_t d = 0; d < w.size(); ++d) {
        std::vector<double> wp = w, wm = w;
        wp[d] += h;
        wm[d] -= h;
        const double fd = (logistic_bce_at(wp, b, set) - logistic_bce_at(wm, b, set)) /
                          (2.0 * h);
        CHECK(grad[d] == doctest::Approx(fd).epsilon(1e-6));
    }
    const double fdb =
        (logistic_bce_at(w, b + h, set) - logistic_bce_at(w, b - h, set)) / (2.0 * h);
    CHECK(grad_b == doctest::Approx(fdb).epsilon(1e-6));
}

TEST_CASE("scoring matches the closed-form model") {
    ScoreModel lin;
    lin.kind = LearnerKind::Logistic;
    lin.dim = 2;
    lin.w1 = {1.5, -2.0};
    lin.b2 = 0.25;
    std::vector<double> x{0.4, 0.3};
    const double z = 1.5 * 0.4 - 2.0 * 0.3 + 0.25;
    CHECK(score(lin, x) == doctest::Approx(1.0 / (1.0 + std::exp(-z))).epsilon(1e-15));

    ScoreModel mlp;
    mlp.kind = LearnerKind::Mlp;
    mlp.dim = 2;
    mlp.hidden = 2;
    mlp.w1 = {1.0, 0.0, 0.0, 1.0};
    mlp.b1 = {0.5, -0.5};
    mlp.w2 = {2.0, -1.0};
    mlp.b2 = 0.25;
    std::vector<double> x2{0.3, -0.2};
    const double zm = 2.0 * std::tanh(0.8) - std::tanh(-0.7) + 0.25;
    CHECK(score(mlp, x2) == doctest::Approx(1.0 / (1.0 + std::exp(-zm))).epsilon(1e-15));

    LabeledSet set;
    set.dim = 2;
    set.x = {0.4, 0.3, 0.3, -0.2, 0.0, 0.0};
    set.y = {1, 0, 1};
    auto all = score_all(lin, set);
    REQUIRE(all.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(all[i] == score(lin, set.row(i)));
}

TEST_CASE("training separates blobs and keeps the best snapshot") {
    LabeledSet tr = blob_set(11, 300, 1.2);
    LabeledSet va = blob_set(12, 100, 1.2);

    TrainerConfig cfg;
    cfg.learner = LearnerKind::Logistic;
    cfg.max_epochs = 80;
    cfg.learning_rate = 0.5;
    cfg.lr_decay = 0.99;
    cfg.patience = 15;
    ScoreModel m = train(tr, va, cfg);

    REQUIRE(!m.history.empty());
    REQUIRE(m.best_epoch >= 1);
    REQUIRE(m.best_epoch <= m.history.size());
    const double best = m.history[m.best_epoch - 1].val_bce;
    for (const EpochLoss& e : m.history) CHECK(best <= e.val_bce + 1e-12);
    CHECK(best < std::log(2.0)); // better than an uninformed constant

    auto scores = score_all(m, va);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < va.size(); ++i)
        if ((scores[i] >= 0.5) == (va.y[i] == 1)) ++correct;
    CHECK(static_cast<double>(correct) / static_cast<double>(va.size()) > 0.8);
}

TEST_CASE("mlp training works and is seed-deterministic") {
    LabeledSet tr = blob_set(21, 240, 1.0);
    LabeledSet va = blob_set(22, 80, 1.0);

    TrainerConfig cfg;
    cfg.learner = LearnerKind::Mlp;
    cfg.hidden_width = 8;
    cfg.max_epochs = 60;
    cfg.learning_rate = 0.3;
    cfg.lr_decay = 0.99;
    cfg.patience = 10;
    cfg.seed = 5;

    ScoreModel a = train(tr, va, cfg);
    ScoreModel b = train(tr, va, cfg);
    CHECK(a.w1 == b.w1);
    CHECK(a.b1 == b.b1);
    CHECK(a.w2 == b.w2);
    CHECK(a.b2 == b.b2);
    CHECK(a.best_epoch == b.best_epoch);

    TrainerConfig other = cfg;
    other.seed = 6;
    ScoreModel c = train(tr, va, other);
    CHECK(a.w1 != c.w1); // different init draw

    const double bce = a.history[a.best_epoch - 1].val_bce;
    CHECK(bce < std::log(2.0));
}

TEST_CASE("minibatch order is seeded and reproducible") {
    LabeledSet tr = blob_set(31, 200, 0.9);
    LabeledSet va = blob_set(32, 60, 0.9);

    TrainerConfig cfg;
    cfg.learner = LearnerKind::Logistic;
    cfg.batch_size = 32;
    cfg.max_epochs = 40;
    cfg.learning_rate = 0.3;
    cfg.lr_decay = 0.99;
    cfg.patience = 10;
    cfg.seed = 9;
    ScoreModel a = train(tr, va, cfg);
    ScoreModel b = train(tr, va, cfg);
    CHECK(a.w1 == b.w1);
    CHECK(a.b2 == b.b2);
}

TEST_CASE("degenerate training inputs are rejected") {
    LabeledSet tr = blob_set(41, 50, 1.0);
    LabeledSet va = blob_set(42, 20, 1.0);
    TrainerConfig cfg;
    cfg.max_epochs = 10;

    LabeledSet single = tr;
    std::fill(single.y.begin(), single.y.end(), 1);
    CHECK_THROWS_AS(train(single, va, cfg), DegenerateTraining);

    LabeledSet empty;
    empty.dim = tr.dim;
    CHECK_THROWS_AS(train(empty, va, cfg), DegenerateTraining);
    CHECK_THROWS_AS(train(tr, empty, cfg), DegenerateTraining);
}

TEST_CASE("trainer config validation") {
    TrainerConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    TrainerConfig bad = cfg;
    bad.max_epochs = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.learning_rate = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.lr_decay = 1.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.learner = LearnerKind::Mlp;
    bad.hidden_width = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("models serialize exactly") {
    LabeledSet tr = blob_set(51, 120, 1.0);
    LabeledSet va = blob_set(52, 40, 1.0);
    TrainerConfig cfg;
    cfg.learner = LearnerKind::Mlp;
    cfg.hidden_width = 4;
    cfg.max_epochs = 30;
    cfg.learning_rate = 0.3;
    cfg.patience = 10;
    ScoreModel m = train(tr, va, cfg);

    ScoreModel rt = model_from_json(model_to_json(m));
    CHECK(rt.kind == m.kind);
    CHECK(rt.dim == m.dim);
    CHECK(rt.hidden == m.hidden);
    CHECK(rt.w1 == m.w1);
    CHECK(rt.b1 == m.b1);
    CHECK(rt.w2 == m.w2);
    CHECK(rt.b2 == m.b2);
    CHECK(rt.best_epoch == m.best_epoch);
    std::vector<double> x(m.dim, 0.1);
    CHECK(score(rt, x) == score(m, x));
}
