#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "biasaudit/stats.hpp"
#include "oracles.hpp"

using namespace biasaudit;

TEST_CASE("incomplete beta agrees with closed forms") {
    for (double x : {0.0, 0.1, 0.37, 0.5, 0.99, 1.0}) {
        CHECK(incomplete_beta(1.0, 1.0, x) == doctest::Approx(x).epsilon(1e-14));
        CHECK(incomplete_beta(2.0, 1.0, x) == doctest::Approx(x * x).epsilon(1e-13));
        CHECK(incomplete_beta(1.0, 2.0, x) ==
              doctest::Approx(2.0 * x - x * x).epsilon(1e-13));
    }
    // Symmetry I_x(a,b) = 1 - I_{1-x}(b,a).
    for (double x : {0.05, 0.3, 0.62, 0.9})
        CHECK(incomplete_beta(3.5, 2.25, x) ==
              doctest::Approx(1.0 - incomplete_beta(2.25, 3.5, 1.0 - x)).epsilon(1e-12));
}

TEST_CASE("t distribution matches quadrature across df and t") {
    for (double df : {1.0, 2.0, 3.7, 10.0, 30.0, 200.0}) {
        for (double t : {-8.0, -2.5, -1.0, -0.2, 0.0, 0.4, 1.5, 4.0, 12.0}) {
            CAPTURE(df);
            CAPTURE(t);
            CHECK(student_t_cdf(t, df) ==
                  doctest::Approx(testoracle::t_cdf_quad(t, df)).epsilon(5e-12));
            CHECK(student_t_two_sided_p(t, df) ==
                  doctest::Approx(testoracle::two_sided_p_quad(t, df)).epsilon(1e-9));
        }
    }
    // Known closed forms: df=1 is Cauchy, df=2 has an algebraic CDF.
    CHECK(student_t_cdf(1.0, 1.0) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(student_t_cdf(4.0, 2.0) ==
          doctest::Approx(0.5 * (1.0 + 4.0 / std::sqrt(2.0 + 16.0))).epsilon(1e-12));
}

TEST_CASE("t quantile inverts the cdf") {
    CHECK(student_t_quantile(0.975, 1.0) == doctest::Approx(12.7062047361747).epsilon(1e-9));
    CHECK(student_t_quantile(0.975, 4.0) ==
          doctest::Approx(2.7764451051977987).epsilon(1e-9));
    for (double df : {2.0, 7.5, 40.0})
        for (double p : {0.6, 0.9, 0.975, 0.999}) {
            const double q = student_t_quantile(p, df);
            CHECK(student_t_cdf(q, df) == doctest::Approx(p).epsilon(1e-9));
            CHECK(student_t_quantile(1.0 - p, df) == doctest::Approx(-q).epsilon(1e-9));
        }
}

TEST_CASE("welch test on a hand-checked pair") {
    std::vector<double> a{1.0, 2.0, 3.0};
    std::vector<double> b{2.0, 3.0, 4.0};
    TestResult r = independent_t(a, b);
    CHECK(r.kind == TestKind::IndependentT);
    CHECK(r.statistic == doctest::Approx(-1.224744871391589).epsilon(1e-12));
    CHECK(r.df == doctest::Approx(4.0).epsilon(1e-12));
    // df = 4 has a closed form: p = I_{8/11}(2, 1/2)
    //   = 3/4 * (4/3 - 2 sqrt(3/11) + (2/3)(3/11)^{3/2}).
    CHECK(r.p_value == doctest::Approx(0.287864134726691).epsilon(1e-9));
    CHECK(r.p_value ==
          doctest::Approx(testoracle::two_sided_p_quad(r.statistic, r.df)).epsilon(1e-10));

    // Unequal variances give fractional df strictly between the classic bounds.
    std::vector<double> c{1.0, 1.1, 0.9, 1.05, 0.95};
    std::vector<double> d{3.0, 5.0, 1.0};
    TestResult w = independent_t(c, d);
    CHECK(w.df > 1.9);
    CHECK(w.df < 6.0);
    CHECK(w.p_value ==
          doctest::Approx(testoracle::two_sided_p_quad(w.statistic, w.df)).epsilon(1e-10));

    CHECK_THROWS_AS(independent_t(std::vector<double>{1.0}, b), std::invalid_argument);
}

TEST_CASE("paired test on a hand-checked pair") {
    std::vector<double> a{2.0, 3.0, 5.0};
    std::vector<double> b{1.0, 2.0, 3.0};
    TestResult r = paired_t(a, b);
    CHECK(r.kind == TestKind::PairedT);
    CHECK(r.statistic == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(r.df == 2.0);
    CHECK(r.p_value == doctest::Approx(0.0571909584179366).epsilon(1e-10));

    CHECK_THROWS_AS(paired_t(a, std::vector<double>{1.0, 2.0}), std::invalid_argument);
    CHECK_THROWS_AS(paired_t(std::vector<double>{1.0}, std::vector<double>{2.0}),
                    std::invalid_argument);
}

TEST_CASE("degenerate variance conventions") {
    std::vector<double> flat{2.0, 2.0, 2.0};
    std::vector<double> same{2.0, 2.0, 2.0};
    std::vector<double> other{3.0, 3.0, 3.0};

    TestResult eq = independent_t(flat, same);
    CHECK(eq.statistic == 0.0);
    CHECK(eq.p_value == 1.0);

    TestResult ne = independent_t(flat, other);
    CHECK(std::isinf(ne.statistic));
    CHECK(ne.statistic < 0.0);
    CHECK(ne.p_value == 0.0);

    TestResult peq = paired_t(flat, same);
    CHECK(peq.statistic == 0.0);
    CHECK(peq.p_value == 1.0);
    TestResult pne = paired_t(other, flat);
    CHECK(std::isinf(pne.statistic));
    CHECK(pne.statistic > 0.0);
    CHECK(pne.p_value == 0.0);
}

TEST_CASE("benjamini-hochberg on hand-checked vectors") {
    std::vector<double> all_small{0.01, 0.02, 0.03, 0.04};
    auto r1 = benjamini_hochberg(all_small, 0.05);
    CHECK(r1 == std::vector<bool>{true, true, true, true});

    std::vector<double> none{0.05, 0.5, 0.9};
    auto r2 = benjamini_hochberg(none, 0.05);
    CHECK(r2 == std::vector<bool>{false, false, false});

    std::vector<double> partial{0.01, 0.04, 0.9};
    auto r3 = benjamini_hochberg(partial, 0.05);
    CHECK(r3 == std::vector<bool>{true, false, false});

    // Step-up rescue: a larger p is admitted because a later rank passes.
    std::vector<double> rescue{0.03, 0.039, 0.9};
    auto r4 = benjamini_hochberg(rescue, 0.06);
    CHECK(r4 == std::vector<bool>{true, true, false});

    CHECK(benjamini_hochberg({}, 0.05).empty());
}

TEST_CASE("benjamini-hochberg equals the definitional scan and is monotone in q") {
    std::mt19937_64 rng(777);
    std::uniform_int_distribution<int> m_dist(1, 40);
    std::uniform_real_distribution<double> p_dist(0.0, 1.0);
    std::uniform_real_distribution<double> small(0.0, 0.08);
    for (int trial = 0; trial < 400; ++trial) {
        const int m = m_dist(rng);
        std::vector<double> p(static_cast<std::size_t>(m));
        for (double& v : p) v = (rng() % 3 == 0) ? small(rng) : p_dist(rng);
        CAPTURE(trial);
        auto got = benjamini_hochberg(p, 0.05);
        auto want = testoracle::bh_scan(p, 0.05);
        CHECK(got == want);

        auto loose = benjamini_hochberg(p, 0.2);
        for (std::size_t i = 0; i < p.size(); ++i)
            if (got[i]) CHECK(loose[i]); // rejections only grow with q
    }
}

TEST_CASE("crossover detection brackets sign changes") {
    using OD = std::optional<double>;
    std::vector<double> rates{0.0, 0.25, 0.5, 1.0};

    std::vector<OD> once{0.1, 0.05, -0.05, -0.2};
    auto c1 = detect_crossovers(once, rates);
    REQUIRE(c1.size() == 1);
    CHECK(c1[0].rate_low == 0.25);
    CHECK(c1[0].rate_high == 0.5);
    CHECK(c1[0].delta_low == 0.05);
    CHECK(c1[0].delta_high == -0.05);

    std::vector<OD> none{0.1, 0.2, 0.05, 0.3};
    CHECK(detect_crossovers(none, rates).empty());

    // Undefined entries are bridged, so the interval spans non-adjacent rates.
    std::vector<OD> gap{0.1, std::nullopt, std::nullopt, -0.1};
    auto c2 = detect_crossovers(gap, rates);
    REQUIRE(c2.size() == 1);
    CHECK(c2[0].rate_low == 0.0);
    CHECK(c2[0].rate_high == 1.0);

    // An exact zero is its own degenerate interval and bridges as positive.
    std::vector<double> r3{0.0, 0.5, 1.0};
    std::vector<OD> touch{0.1, 0.0, 0.2};
    auto c3 = detect_crossovers(touch, r3);
    REQUIRE(c3.size() == 1);
    CHECK(c3[0].rate_low == 0.5);
    CHECK(c3[0].rate_high == 0.5);
    CHECK(c3[0].delta_low == 0.0);
    CHECK(c3[0].delta_high == 0.0);

    std::vector<OD> through{0.1, 0.0, -0.2};
    auto c4 = detect_crossovers(through, r3);
    REQUIRE(c4.size() == 2); // the zero itself plus the drop below it
    CHECK(c4[1].rate_low == 0.5);
    CHECK(c4[1].rate_high == 1.0);

    std::vector<OD> from_below{-0.1, 0.0, -0.2};
    auto c5 = detect_crossovers(from_below, r3);
    REQUIRE(c5.size() == 3); // rise to zero, the zero, drop back below
}

TEST_CASE("crossover detection applied to two-group rate series") {
    // The practical usage: per-rate fold-mean FNR differences between a
    // poisoned group and the population, changing sign as the dose rises.
    std::vector<double> rates{0.0, 0.05, 0.1, 0.25, 0.5, 0.75, 1.0};
    std::vector<std::optional<double>> deltas{-0.02, -0.01, -0.015, 0.01,
                                              0.08,  0.15,  0.3};
    auto cs = detect_crossovers(deltas, rates);
    REQUIRE(cs.size() == 1);
    CHECK(cs[0].rate_low == 0.1);
    CHECK(cs[0].rate_high == 0.25);
}
