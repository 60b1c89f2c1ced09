#pragma once

// Pairwise-preference statistics: Bradley-Terry fitting, Top-K ratios, and the paired test
// used to compare methods on shared instances.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "error.hpp"

namespace ttsflow {

/// wins[i][j] = number of times method i was preferred over method j.
struct ComparisonMatrix {
    std::vector<std::string> methods;
    std::vector<std::vector<std::uint64_t>> wins;

    explicit ComparisonMatrix(std::vector<std::string> labels = {})
        : methods(std::move(labels)),
          wins(methods.size(), std::vector<std::uint64_t>(methods.size(), 0)) {}

    [[nodiscard]] std::size_t size() const { return methods.size(); }

    [[nodiscard]] std::size_t index_of(std::string_view label) const {
        for (std::size_t i = 0; i < methods.size(); ++i)
            if (methods[i] == label) return i;
        throw Error("unknown method '" + std::string(label) + "'");
    }

    /// Adds the label if new; returns its index.
    std::size_t intern(std::string_view label) {
        for (std::size_t i = 0; i < methods.size(); ++i)
            if (methods[i] == label) return i;
        methods.emplace_back(label);
        for (auto& row : wins) row.push_back(0);
        wins.emplace_back(methods.size(), 0);
        return methods.size() - 1;
    }

    void validate() const {
        require(wins.size() == methods.size(), "ComparisonMatrix: row count mismatch");
        for (std::size_t i = 0; i < wins.size(); ++i) {
            require(wins[i].size() == methods.size(), "ComparisonMatrix: column count mismatch");
            require(wins[i][i] == 0, "ComparisonMatrix: diagonal must be zero");
        }
    }
};

struct BtOptions {
    double tol = 1e-12;
    int max_iter = 100000;
    bool smoothing = false;       // add pseudo_wins both ways between every pair
    double pseudo_wins = 1e-6;
    std::vector<double> initial;  // optional positive starting scores
};

struct BtResult {
    std::vector<double> pi;  // sums to 1
    int iterations = 0;
    bool converged = false;
    std::vector<double> log_likelihood;  // at the start and after every iteration
};

inline double bt_log_likelihood(const std::vector<std::vector<double>>& w,
                                const std::vector<double>& pi) {
    double ll = 0.0;
    for (std::size_t i = 0; i < pi.size(); ++i)
        for (std::size_t j = 0; j < pi.size(); ++j)
            if (i != j && w[i][j] > 0.0) ll += w[i][j] * (std::log(pi[i]) - std::log(pi[i] + pi[j]));
    return ll;
}

namespace detail {

/// Every method reaches every other along "beat" edges; otherwise the MLE is not finite.
inline bool strongly_connected(const std::vector<std::vector<double>>& w) {
    const std::size_t n = w.size();
    auto reach = [&](bool forward) {
        std::vector<bool> seen(n, false);
        std::vector<std::size_t> stack{0};
        seen[0] = true;
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            for (std::size_t j = 0; j < n; ++j) {
                const double edge = forward ? w[i][j] : w[j][i];
                if (!seen[j] && edge > 0.0) {
                    seen[j] = true;
                    stack.push_back(j);
                }
            }
        }
        return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
    };
    return reach(true) && reach(false);
}

} // namespace detail

/// Maximum-likelihood Bradley-Terry scores by the minorization-maximization fixed point
///   pi_i <- W_i / sum_j n_ij / (pi_i + pi_j),
/// all scores updated together and renormalized to sum 1 each iteration.
inline BtResult bt_fit(const ComparisonMatrix& data, const BtOptions& opts = {}) {
    data.validate();
    const std::size_t n = data.size();
    require(n >= 2, "bt_fit: need at least two methods");

    std::vector<std::vector<double>> w(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j)
                w[i][j] = static_cast<double>(data.wins[i][j]) + (opts.smoothing ? opts.pseudo_wins : 0.0);

    for (std::size_t i = 0; i < n; ++i) {
        double games = 0.0;
        for (std::size_t j = 0; j < n; ++j) games += w[i][j] + w[j][i];
        if (games == 0.0)
            throw Unidentifiable("bt_fit: method '" + data.methods[i] + "' has no comparisons");
    }
    if (!detail::strongly_connected(w))
        throw Unidentifiable(
            "bt_fit: comparison graph is not strongly connected; scores are unidentifiable");

    std::vector<double> pi(n, 1.0 / static_cast<double>(n));
    if (!opts.initial.empty()) {
        require(opts.initial.size() == n, "bt_fit: initial score count mismatch");
        for (double p : opts.initial) require(std::isfinite(p) && p > 0.0, "bt_fit: initial scores must be positive");
        pi = opts.initial;
    }
    auto normalize = [](std::vector<double>& p) {
        const double s = std::accumulate(p.begin(), p.end(), 0.0);
        for (double& v : p) v /= s;
    };
    normalize(pi);

    std::vector<double> total_wins(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) total_wins[i] += w[i][j];

    BtResult result;
    result.log_likelihood.push_back(bt_log_likelihood(w, pi));
    std::vector<double> next(n);
    for (int it = 0; it < opts.max_iter; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double denom = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                if (j != i) denom += (w[i][j] + w[j][i]) / (pi[i] + pi[j]);
            next[i] = total_wins[i] / denom;
        }
        normalize(next);
        double change = 0.0;
        for (std::size_t i = 0; i < n; ++i) change = std::max(change, std::abs(next[i] - pi[i]) / pi[i]);
        pi.swap(next);
        result.iterations = it + 1;
        result.log_likelihood.push_back(bt_log_likelihood(w, pi));
        if (change < opts.tol) {
            result.converged = true;
            break;
        }
    }
    result.pi = std::move(pi);
    return result;
}

/// Per group j, a score for every method (higher is better).
struct SelectionTable {
    std::vector<std::string> methods;
    std::vector<std::vector<double>> scores;

    [[nodiscard]] std::size_t index_of(std::string_view label) const {
        for (std::size_t i = 0; i < methods.size(); ++i)
            if (methods[i] == label) return i;
        throw Error("unknown method '" + std::string(label) + "'");
    }

    void validate() const {
        require(!methods.empty(), "SelectionTable: no methods");
        require(!scores.empty(), "SelectionTable: no groups");
        for (const auto& g : scores) {
            require(g.size() == methods.size(), "SelectionTable: every group must score every method");
            for (double s : g) require(!std::isnan(s), "SelectionTable: NaN score");
        }
    }
};

/// Indices of the k best methods in a group; ties go to the lower method index.
inline std::vector<std::size_t> top_k(const std::vector<double>& scores, std::size_t k) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    order.resize(std::min(k, order.size()));
    return order;
}

/// Fraction of groups in which `method` lands among the top k.
inline double top_k_ratio(const SelectionTable& table, std::string_view method, int k) {
    table.validate();
    const std::size_t i = table.index_of(method);
    require(k >= 1 && static_cast<std::size_t>(k) <= table.methods.size(),
            "top_k_ratio: k must lie in [1, method count]");
    std::size_t hits = 0;
    for (const auto& g : table.scores) {
        const auto top = top_k(g, static_cast<std::size_t>(k));
        if (std::find(top.begin(), top.end(), i) != top.end()) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(table.scores.size());
}

struct PairedTest {
    std::size_t n = 0;
    double mean_diff = 0.0;
    double sd_diff = 0.0;
    double t = 0.0;
    double p_greater = 1.0;   // H1: mean(a - b) > 0
    double p_two_sided = 1.0;
};

/// Paired Student t-test on a - b.
inline PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() == b.size() && a.size() >= 2, "paired_t_test: need two equal samples of size >= 2");
    PairedTest out;
    out.n = a.size();
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    out.mean_diff = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    double ss = 0.0;
    for (double x : d) ss += (x - out.mean_diff) * (x - out.mean_diff);
    out.sd_diff = std::sqrt(ss / static_cast<double>(d.size() - 1));
    if (out.sd_diff == 0.0) {
        out.t = out.mean_diff == 0.0 ? 0.0
                                     : std::copysign(std::numeric_limits<double>::infinity(), out.mean_diff);
        out.p_greater = out.mean_diff > 0.0 ? 0.0 : (out.mean_diff < 0.0 ? 1.0 : 0.5);
        out.p_two_sided = out.mean_diff == 0.0 ? 1.0 : 0.0;
        return out;
    }
    out.t = out.mean_diff / (out.sd_diff / std::sqrt(static_cast<double>(d.size())));
    const boost::math::students_t dist(static_cast<double>(d.size() - 1));
    out.p_greater = boost::math::cdf(boost::math::complement(dist, out.t));
    out.p_two_sided = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t)));
    return out;
}

} // namespace ttsflow
