#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "ttsflow/stats.hpp"

using namespace ttsflow;

namespace {

ComparisonMatrix matrix(std::vector<std::vector<std::uint64_t>> wins) {
    ComparisonMatrix m;
    for (std::size_t i = 0; i < wins.size(); ++i) m.methods.push_back("m" + std::to_string(i));
    m.wins = std::move(wins);
    return m;
}

} // namespace

TEST(BradleyTerry, TwoItemClosedForm) {
    const auto fit = bt_fit(matrix({{0, 3}, {1, 0}}));
    EXPECT_TRUE(fit.converged);
    EXPECT_NEAR(fit.pi[0] / fit.pi[1], 3.0, 1e-12);
    EXPECT_NEAR(fit.pi[0] + fit.pi[1], 1.0, 1e-15);
}

TEST(BradleyTerry, SymmetricWinsGiveEqualScores) {
    const auto fit = bt_fit(matrix({{0, 5, 5, 5}, {5, 0, 5, 5}, {5, 5, 0, 5}, {5, 5, 5, 0}}));
    for (double p : fit.pi) EXPECT_NEAR(p, 0.25, 1e-15);
}

TEST(BradleyTerry, RecoversPlantedScores) {
    const std::vector<double> planted{0.5, 0.3, 0.2};
    std::mt19937_64 gen(2024);
    ComparisonMatrix m({"a", "b", "c"});
    const std::uint64_t per_pair = 100'000;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = i + 1; j < 3; ++j) {
            std::binomial_distribution<std::uint64_t> draw(per_pair, planted[i] / (planted[i] + planted[j]));
            const auto w = draw(gen);
            m.wins[i][j] = w;
            m.wins[j][i] = per_pair - w;
        }
    const auto fit = bt_fit(m);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(fit.pi[i], planted[i], 1e-2);
}

TEST(BradleyTerry, LikelihoodNeverDecreases) {
    std::mt19937_64 gen(9);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t n = 3 + static_cast<std::size_t>(rep % 4);
        ComparisonMatrix m(std::vector<std::string>(n, ""));
        for (std::size_t i = 0; i < n; ++i) {
            m.methods[i] = "m" + std::to_string(i);
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) m.wins[i][j] = 1 + gen() % 30;
        }
        const auto fit = bt_fit(m);
        for (std::size_t k = 1; k < fit.log_likelihood.size(); ++k)
            EXPECT_GE(fit.log_likelihood[k], fit.log_likelihood[k - 1] - 1e-9 * std::abs(fit.log_likelihood[k - 1]));
        EXPECT_TRUE(fit.converged);
    }
}

TEST(BradleyTerry, GaugeInvariance) {
    const auto m = matrix({{0, 7, 2}, {3, 0, 9}, {8, 1, 0}});
    BtOptions a, b;
    a.initial = {1.0, 2.0, 3.0};
    b.initial = {1000.0, 2000.0, 3000.0};
    const auto fa = bt_fit(m, a), fb = bt_fit(m, b);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(fa.pi[i], fb.pi[i], 1e-12);
    // a fixed point of the MLE: each method's wins equal its expected wins
    for (std::size_t i = 0; i < 3; ++i) {
        double won = 0.0, expected = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
            if (i == j) continue;
            won += static_cast<double>(m.wins[i][j]);
            expected += static_cast<double>(m.wins[i][j] + m.wins[j][i]) * fa.pi[i] / (fa.pi[i] + fa.pi[j]);
        }
        EXPECT_NEAR(won, expected, 1e-8);
    }
}

TEST(BradleyTerry, UnidentifiableInputs) {
    EXPECT_THROW(bt_fit(matrix({{0, 3, 0}, {1, 0, 0}, {0, 0, 0}})), Unidentifiable);
    // a method that never loses has no finite score
    EXPECT_THROW(bt_fit(matrix({{0, 3}, {0, 0}})), Unidentifiable);
    BtOptions smooth;
    smooth.smoothing = true;
    const auto fit = bt_fit(matrix({{0, 3}, {0, 0}}), smooth);
    EXPECT_GT(fit.pi[0], fit.pi[1]);
    EXPECT_THROW(bt_fit(matrix({{1, 3}, {1, 0}})), Error);
}

TEST(TopK, RatioExamples) {
    SelectionTable t;
    t.methods = {"ours", "a", "b"};
    for (int g = 0; g < 100; ++g) {
        if (g < 80) t.scores.push_back({3.0, 2.0, 1.0});
        else t.scores.push_back({2.0, 3.0, 1.0});
    }
    EXPECT_DOUBLE_EQ(top_k_ratio(t, "ours", 1), 0.80);
    EXPECT_DOUBLE_EQ(top_k_ratio(t, "ours", 2), 1.0);
    for (const auto& m : t.methods) EXPECT_DOUBLE_EQ(top_k_ratio(t, m, 3), 1.0);
    EXPECT_THROW(top_k_ratio(t, "nobody", 1), Error);
    EXPECT_THROW(top_k_ratio(t, "ours", 4), Error);
    EXPECT_THROW(top_k_ratio(t, "ours", 0), Error);
}

TEST(TopK, MatchesEnumerationAndMonotone) {
    std::mt19937_64 gen(15);
    for (int rep = 0; rep < 30; ++rep) {
        SelectionTable t;
        const std::size_t n = 2 + gen() % 5;
        for (std::size_t i = 0; i < n; ++i) t.methods.push_back("m" + std::to_string(i));
        for (int g = 0; g < 40; ++g) {
            std::vector<double> s(n);
            for (auto& v : s) v = static_cast<double>(gen() % 4);
            t.scores.push_back(s);
        }
        for (std::size_t i = 0; i < n; ++i) {
            double prev = 0.0;
            for (std::size_t k = 1; k <= n; ++k) {
                // i is in the top k iff fewer than k methods beat it outright or tie with a lower index
                int hits = 0;
                for (const auto& g : t.scores) {
                    std::size_t ahead = 0;
                    for (std::size_t j = 0; j < n; ++j)
                        if (g[j] > g[i] || (g[j] == g[i] && j < i)) ++ahead;
                    hits += ahead < k;
                }
                const double r = top_k_ratio(t, t.methods[i], static_cast<int>(k));
                EXPECT_DOUBLE_EQ(r, hits / 40.0);
                EXPECT_GE(r, prev);
                prev = r;
            }
        }
    }
}

TEST(PairedTTest, KnownValues) {
    const std::vector<double> a{1.0, 2.0, 3.0, 4.0, 5.0};
    const std::vector<double> b{0.5, 2.1, 2.4, 3.6, 4.4};
    const auto t = paired_t_test(a, b);
    // differences 0.5,-0.1,0.6,0.4,0.6: mean 0.4, sd sqrt(0.085)
    EXPECT_NEAR(t.mean_diff, 0.4, 1e-12);
    EXPECT_NEAR(t.t, 0.4 / (std::sqrt(0.085) / std::sqrt(5.0)), 1e-9);
    EXPECT_NEAR(t.p_two_sided, 2.0 * t.p_greater, 1e-12);
    EXPECT_GT(t.p_greater, 0.0);
    EXPECT_LT(t.p_greater, 0.05);
    const auto flat = paired_t_test({1.0, 1.0}, {1.0, 1.0});
    EXPECT_EQ(flat.p_two_sided, 1.0);
    EXPECT_THROW(paired_t_test({1.0}, {1.0}), Error);
}
