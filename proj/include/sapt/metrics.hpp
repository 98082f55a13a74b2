// Performance-matrix bookkeeping, the four continual-learning metrics, and
// the per-example scorers (exact-match accuracy and Rouge-L F1).
#pragma once

#include <algorithm>
#include <cctype>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sapt/errors.hpp"

namespace sapt {

// Lower-triangular score matrix: a(i, j) is the test score on task j after
// training task i (1-based), plus the optional individual-training row a0.
class PerformanceMatrix {
  public:
    PerformanceMatrix() = default;
    explicit PerformanceMatrix(std::size_t task_count) : task_count_(task_count) {}

    std::size_t task_count() const { return task_count_; }

    void append_row(const std::vector<double>& row) {
        if (row.size() != rows_.size() + 1) {
            throw StateError("PerformanceMatrix: row " + std::to_string(rows_.size() + 1) + " must have " +
                             std::to_string(rows_.size() + 1) + " entries");
        }
        if (rows_.size() == task_count_) throw StateError("PerformanceMatrix: all rows already filled");
        for (double v : row) check_score(v);
        rows_.push_back(row);
    }

    void set_individual(std::vector<double> a0) {
        if (a0.size() != task_count_) throw StateError("PerformanceMatrix: individual row must have T entries");
        for (double v : a0) check_score(v);
        individual_ = std::move(a0);
    }

    bool complete() const { return rows_.size() == task_count_; }
    bool has_individual() const { return !individual_.empty(); }

    double at(std::size_t i, std::size_t j) const {
        if (i < 1 || i > rows_.size() || j < 1 || j > i) {
            throw StateError("PerformanceMatrix: cell (" + std::to_string(i) + "," + std::to_string(j) + ") not available");
        }
        return rows_[i - 1][j - 1];
    }

    double individual(std::size_t t) const {
        if (!has_individual()) throw StateError("PerformanceMatrix: individual row absent");
        return individual_.at(t - 1);
    }

    const std::vector<std::vector<double>>& rows() const { return rows_; }
    const std::vector<double>& individual_row() const { return individual_; }

    static PerformanceMatrix from_rows(std::vector<std::vector<double>> rows, std::vector<double> individual = {}) {
        PerformanceMatrix m(rows.size());
        for (auto& r : rows) m.append_row(r);
        if (!individual.empty()) m.set_individual(std::move(individual));
        return m;
    }

  private:
    static void check_score(double v) {
        if (!(v >= 0.0 && v <= 100.0)) throw StateError("PerformanceMatrix: score outside [0,100]");
    }

    std::size_t task_count_ = 0;
    std::vector<std::vector<double>> rows_;
    std::vector<double> individual_;
};

// AP: mean of the last row.
inline double average_performance(const PerformanceMatrix& m) {
    if (!m.complete()) throw StateError("average_performance: final row incomplete");
    const std::size_t t_count = m.task_count();
    double total = 0.0;
    for (std::size_t t = 1; t <= t_count; ++t) total += m.at(t_count, t);
    return total / static_cast<double>(t_count);
}

// F.Ra: mean over tasks t < T of (peak score on t up to row T-1) - (final score on t).
inline double forgetting_rate(const PerformanceMatrix& m) {
    const std::size_t t_count = m.task_count();
    if (t_count < 2) throw StateError("forgetting_rate: needs at least two tasks");
    if (!m.complete()) throw StateError("forgetting_rate: matrix incomplete");
    double total = 0.0;
    for (std::size_t t = 1; t + 1 <= t_count; ++t) {
        double peak = m.at(t, t);
        for (std::size_t k = t; k + 1 <= t_count; ++k) peak = std::max(peak, m.at(k, t));
        total += peak - m.at(t_count, t);
    }
    return total / static_cast<double>(t_count - 1);
}

// FWT: mean of diagonal minus individual-training scores.
inline double forward_transfer(const PerformanceMatrix& m) {
    if (!m.has_individual()) throw StateError("forward_transfer: individual-training row absent");
    if (!m.complete()) throw StateError("forward_transfer: matrix incomplete");
    const std::size_t t_count = m.task_count();
    double total = 0.0;
    for (std::size_t t = 1; t <= t_count; ++t) total += m.at(t, t) - m.individual(t);
    return total / static_cast<double>(t_count);
}

// BWT: mean over tasks t < T of (final score on t) - (score right after learning t).
inline double backward_transfer(const PerformanceMatrix& m) {
    const std::size_t t_count = m.task_count();
    if (t_count < 2) throw StateError("backward_transfer: needs at least two tasks");
    if (!m.complete()) throw StateError("backward_transfer: matrix incomplete");
    double total = 0.0;
    for (std::size_t t = 1; t + 1 <= t_count; ++t) total += m.at(t_count, t) - m.at(t, t);
    return total / static_cast<double>(t_count - 1);
}

// ---------------------------------------------------------------------------
// scorers

namespace metrics_detail {

inline std::vector<std::string> whitespace_tokens(const std::string& s) {
    std::vector<std::string> tokens;
    std::istringstream ss(s);
    std::string tok;
    while (ss >> tok) tokens.push_back(tok);
    return tokens;
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline std::string normalize_label(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    std::string out = s.substr(b, e - b);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace metrics_detail

// Rouge-L F1 on whitespace tokens, scaled to [0, 100].
inline double rouge_l(const std::string& reference, const std::string& hypothesis) {
    const auto ref = metrics_detail::whitespace_tokens(reference);
    const auto hyp = metrics_detail::whitespace_tokens(hypothesis);
    if (ref.empty()) throw InputError("rouge_l: empty reference");
    if (hyp.empty()) return 0.0;
    const double lcs = static_cast<double>(metrics_detail::lcs_length(ref, hyp));
    const double precision = lcs / static_cast<double>(hyp.size());
    const double recall = lcs / static_cast<double>(ref.size());
    if (precision + recall == 0.0) return 0.0;
    return 100.0 * (2.0 * precision * recall) / (precision + recall);
}

// Exact match after trimming and case folding; 0 or 100.
inline double accuracy(const std::string& reference_label, const std::string& hypothesis) {
    return metrics_detail::normalize_label(reference_label) == metrics_detail::normalize_label(hypothesis) ? 100.0 : 0.0;
}

// ---------------------------------------------------------------------------
// report

// Metrics report JSON. F.Ra and BWT are null for T < 2, FWT is null without
// the individual row.
inline nlohmann::json metrics_report(const PerformanceMatrix& m, const std::string& order_name,
                                     const std::string& method, const std::string& ablation) {
    nlohmann::json j;
    j["AP"] = average_performance(m);
    if (m.task_count() >= 2) {
        j["F.Ra"] = forgetting_rate(m);
        j["BWT"] = backward_transfer(m);
    } else {
        j["F.Ra"] = nullptr;
        j["BWT"] = nullptr;
    }
    if (m.has_individual()) {
        j["FWT"] = forward_transfer(m);
    } else {
        j["FWT"] = nullptr;
    }
    j["matrix"] = m.rows();
    j["individual"] = m.has_individual() ? nlohmann::json(m.individual_row()) : nlohmann::json(nullptr);
    j["order"] = order_name;
    j["method"] = method;
    j["ablation"] = ablation;
    return j;
}

}  // namespace sapt
