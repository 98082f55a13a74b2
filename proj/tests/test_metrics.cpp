#include <gtest/gtest.h>

#include <algorithm>
#include <string>
#include <vector>

#include "sapt/metrics.hpp"
#include "sapt/rng.hpp"

using namespace sapt;

namespace {

// Independent brute-force re-implementation of the four metrics, written
// directly from the definitions, kept free of the production code paths.
struct BruteForce {
    static double ap(const std::vector<std::vector<double>>& a) {
        const std::size_t t_count = a.size();
        double s = 0.0;
        for (std::size_t j = 0; j < t_count; ++j) s += a[t_count - 1][j];
        return s / static_cast<double>(t_count);
    }
    static double fra(const std::vector<std::vector<double>>& a) {
        const std::size_t t_count = a.size();
        double s = 0.0;
        for (std::size_t t = 0; t + 1 < t_count; ++t) {
            double peak = -1e300;
            for (std::size_t k = t; k + 1 < t_count; ++k) peak = std::max(peak, a[k][t]);
            s += peak - a[t_count - 1][t];
        }
        return s / static_cast<double>(t_count - 1);
    }
    static double fwt(const std::vector<std::vector<double>>& a, const std::vector<double>& a0) {
        double s = 0.0;
        for (std::size_t t = 0; t < a.size(); ++t) s += a[t][t] - a0[t];
        return s / static_cast<double>(a.size());
    }
    static double bwt(const std::vector<std::vector<double>>& a) {
        const std::size_t t_count = a.size();
        double s = 0.0;
        for (std::size_t t = 0; t + 1 < t_count; ++t) s += a[t_count - 1][t] - a[t][t];
        return s / static_cast<double>(t_count - 1);
    }
};

// Brute-force LCS over characters of whitespace tokens, via recursion with
// memoization-free small sizes (kept independent of the production DP).
std::size_t lcs_brute(const std::vector<std::string>& a, const std::vector<std::string>& b, std::size_t i, std::size_t j) {
    if (i == a.size() || j == b.size()) return 0;
    if (a[i] == b[j]) return 1 + lcs_brute(a, b, i + 1, j + 1);
    return std::max(lcs_brute(a, b, i + 1, j), lcs_brute(a, b, i, j + 1));
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream ss(s);
    std::string t;
    while (ss >> t) out.push_back(t);
    return out;
}

double rouge_brute(const std::string& ref, const std::string& hyp) {
    auto r = split_ws(ref), h = split_ws(hyp);
    if (h.empty()) return 0.0;
    double lcs = static_cast<double>(lcs_brute(r, h, 0, 0));
    double p = lcs / h.size(), rr = lcs / r.size();
    if (p + rr == 0.0) return 0.0;
    return 100.0 * 2.0 * p * rr / (p + rr);
}

PerformanceMatrix spec_matrix_t3() {
    return PerformanceMatrix::from_rows({{90}, {85, 70}, {80, 65, 75}}, {88, 68, 72});
}

PerformanceMatrix spec_matrix_t2() {
    return PerformanceMatrix::from_rows({{80}, {70, 60}}, {75, 55});
}

std::string random_word(Rng& rng) {
    static const char* words[] = {"the", "cat", "sat", "on", "a", "mat", "dog", "ran", "far", "blue"};
    return words[rng.uniform_index(10)];
}

}  // namespace

TEST(Metrics, AveragePerformance) {
    EXPECT_NEAR(average_performance(spec_matrix_t3()), 220.0 / 3.0, 1e-12);
    EXPECT_NEAR(average_performance(spec_matrix_t2()), 65.0, 1e-12);
    auto constant = PerformanceMatrix::from_rows({{42}, {42, 42}, {42, 42, 42}});
    EXPECT_DOUBLE_EQ(average_performance(constant), 42.0);
}

TEST(Metrics, ForgettingRate) {
    EXPECT_NEAR(forgetting_rate(spec_matrix_t3()), 7.5, 1e-12);
    EXPECT_NEAR(forgetting_rate(spec_matrix_t2()), 10.0, 1e-12);
    auto non_degrading = PerformanceMatrix::from_rows({{50}, {50, 60}, {50, 60, 70}});
    EXPECT_DOUBLE_EQ(forgetting_rate(non_degrading), 0.0);
    auto single = PerformanceMatrix::from_rows({{50}});
    EXPECT_THROW(forgetting_rate(single), StateError);
}

TEST(Metrics, ForwardTransfer) {
    EXPECT_NEAR(forward_transfer(spec_matrix_t3()), 7.0 / 3.0, 1e-12);
    EXPECT_NEAR(forward_transfer(spec_matrix_t2()), 5.0, 1e-12);
    auto no_individual = PerformanceMatrix::from_rows({{50}, {50, 60}});
    EXPECT_THROW(forward_transfer(no_individual), StateError);
    auto zero = PerformanceMatrix::from_rows({{50}, {50, 60}}, {50, 60});
    EXPECT_DOUBLE_EQ(forward_transfer(zero), 0.0);
}

TEST(Metrics, BackwardTransfer) {
    EXPECT_NEAR(backward_transfer(spec_matrix_t3()), -7.5, 1e-12);
    EXPECT_NEAR(backward_transfer(spec_matrix_t2()), -10.0, 1e-12);
    auto non_degrading = PerformanceMatrix::from_rows({{50}, {50, 60}});
    EXPECT_DOUBLE_EQ(backward_transfer(non_degrading), 0.0);
}

TEST(Metrics, MatchesBruteForceOnRandomMatrices) {
    Rng rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t t_count = 2 + rng.uniform_index(7);
        std::vector<std::vector<double>> rows;
        std::vector<double> a0;
        for (std::size_t i = 1; i <= t_count; ++i) {
            std::vector<double> row(i);
            for (double& v : row) v = 100.0 * rng.uniform();
            rows.push_back(row);
        }
        for (std::size_t i = 0; i < t_count; ++i) a0.push_back(100.0 * rng.uniform());
        auto m = PerformanceMatrix::from_rows(rows, a0);
        EXPECT_NEAR(average_performance(m), BruteForce::ap(rows), 1e-12);
        EXPECT_NEAR(forgetting_rate(m), BruteForce::fra(rows), 1e-12);
        EXPECT_NEAR(forward_transfer(m), BruteForce::fwt(rows, a0), 1e-12);
        EXPECT_NEAR(backward_transfer(m), BruteForce::bwt(rows), 1e-12);
    }
}

TEST(Metrics, MonotoneDecayMakesFraEqualMinusBwt) {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t t_count = 2 + rng.uniform_index(5);
        // a[i][j] non-increasing in i for every j: peak is a[j][j].
        std::vector<std::vector<double>> rows;
        for (std::size_t i = 1; i <= t_count; ++i) {
            std::vector<double> row(i);
            for (std::size_t j = 0; j < i; ++j) {
                row[j] = i == j + 1 ? 50.0 + 50.0 * rng.uniform() : std::min(rows[i - 2][j], rows[i - 2][j] - 5.0 * rng.uniform());
            }
            rows.push_back(row);
        }
        auto m = PerformanceMatrix::from_rows(rows);
        EXPECT_NEAR(forgetting_rate(m), -backward_transfer(m), 1e-12);
    }
}

TEST(Metrics, MatrixValidation) {
    PerformanceMatrix m(2);
    EXPECT_THROW(m.append_row({50, 60}), StateError);   // first row must have one entry
    m.append_row({50});
    EXPECT_THROW(average_performance(m), StateError);   // incomplete
    EXPECT_THROW(m.append_row({110, 2}), StateError);   // out of range
}

TEST(RougeL, SpecCases) {
    EXPECT_DOUBLE_EQ(rouge_l("the cat sat", "the cat sat"), 100.0);
    EXPECT_DOUBLE_EQ(rouge_l("alpha beta", "gamma delta"), 0.0);
    EXPECT_NEAR(rouge_l("the cat sat", "the cat"), 80.0, 1e-9);
    EXPECT_THROW(rouge_l("", "anything"), InputError);
    EXPECT_DOUBLE_EQ(rouge_l("ref", ""), 0.0);
}

TEST(RougeL, SelfScoreIsAlwaysHundred) {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        std::string s = random_word(rng);
        for (int w = 0; w < 4; ++w) s += " " + random_word(rng);
        EXPECT_DOUBLE_EQ(rouge_l(s, s), 100.0);
    }
}

TEST(RougeL, MatchesBruteForceOnRandomPairs) {
    Rng rng(55);
    for (int trial = 0; trial < 50; ++trial) {
        std::string ref = random_word(rng), hyp = random_word(rng);
        const std::size_t rn = rng.uniform_index(6), hn = rng.uniform_index(6);
        for (std::size_t i = 0; i < rn; ++i) ref += " " + random_word(rng);
        for (std::size_t i = 0; i < hn; ++i) hyp += " " + random_word(rng);
        EXPECT_NEAR(rouge_l(ref, hyp), rouge_brute(ref, hyp), 1e-9) << ref << " / " << hyp;
    }
}

TEST(Accuracy, NormalizedExactMatch) {
    EXPECT_DOUBLE_EQ(accuracy("positive", "positive"), 100.0);
    EXPECT_DOUBLE_EQ(accuracy("positive", "Positive "), 100.0);
    EXPECT_DOUBLE_EQ(accuracy("positive", "negative"), 0.0);
    EXPECT_DOUBLE_EQ(accuracy("even", " EVEN"), 100.0);
}

TEST(Report, NullsForDegenerateCases) {
    auto single = PerformanceMatrix::from_rows({{70}});
    auto j = metrics_report(single, "o1", "sapt", "none");
    EXPECT_TRUE(j["F.Ra"].is_null());
    EXPECT_TRUE(j["BWT"].is_null());
    EXPECT_TRUE(j["FWT"].is_null());
    EXPECT_DOUBLE_EQ(j["AP"].get<double>(), 70.0);
    auto full = metrics_report(spec_matrix_t3(), "o1", "sapt", "none");
    EXPECT_NEAR(full["F.Ra"].get<double>(), 7.5, 1e-12);
    EXPECT_EQ(full["matrix"].size(), 3u);
    EXPECT_EQ(full["individual"].size(), 3u);
}
