#pragma once

// Analytic reward functions and the rank-based ensemble over them.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "task.hpp"

namespace ttsflow {

enum class Verifier : std::size_t { fidelity = 0, likelihood = 1, smoothness = 2 };

inline constexpr std::size_t kVerifierCount = 3;
inline constexpr std::array<std::string_view, kVerifierCount> kVerifierNames{"fid", "like", "smooth"};

inline Verifier verifier_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kVerifierCount; ++i)
        if (kVerifierNames[i] == name) return static_cast<Verifier>(i);
    throw Error("unknown verifier '" + std::string(name) + "'");
}

/// Which verifiers enter the ensemble, and whether fidelity may look at the ground truth.
struct VerifierConfig {
    std::array<bool, kVerifierCount> active{true, true, true};
    bool blind = false;

    static VerifierConfig subset(std::span<const Verifier> members, bool blind = false) {
        VerifierConfig cfg;
        cfg.active = {false, false, false};
        for (Verifier v : members) cfg.active[static_cast<std::size_t>(v)] = true;
        cfg.blind = blind;
        return cfg;
    }

    [[nodiscard]] std::size_t count() const {
        return static_cast<std::size_t>(std::count(active.begin(), active.end(), true));
    }

    [[nodiscard]] std::string label() const {
        std::string out;
        for (std::size_t i = 0; i < kVerifierCount; ++i) {
            if (!active[i]) continue;
            if (!out.empty()) out += '+';
            out += kVerifierNames[i];
        }
        return out;
    }

    void validate() const { require(count() >= 1, "verifier subset must be nonempty"); }
};

using RawScores = std::array<double, kVerifierCount>;

/// -||x - truth||^2, or in blind mode the observation consistency -||A x - y||^2 / s^2.
inline double v_fidelity(const Vector& x, const RestorationInstance& inst, bool blind = false) {
    if (blind) {
        require(x.size() == inst.op.input_dim(), "v_fidelity: dimension mismatch");
        return -(inst.op.matrix * x - inst.observation).squaredNorm() /
               (inst.op.noise_std * inst.op.noise_std);
    }
    require(x.size() == inst.truth.size(), "v_fidelity: dimension mismatch");
    return -(x - inst.truth).squaredNorm();
}

/// Log-density under the exact (anisotropic) posterior.
inline double v_likelihood(const Vector& x, const RestorationInstance& inst) {
    return inst.exact_posterior.log_density(x);
}

/// Negative total variation.
inline double v_smooth(const Vector& x) {
    double tv = 0.0;
    for (Eigen::Index i = 0; i + 1 < x.size(); ++i) tv += std::abs(x[i + 1] - x[i]);
    return -tv;
}

inline RawScores score_candidate(const Vector& x, const RestorationInstance& inst,
                                 const VerifierConfig& cfg) {
    return {v_fidelity(x, inst, cfg.blind), v_likelihood(x, inst), v_smooth(x)};
}

/// Ranks with 1 = largest value; tied values share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    std::vector<double> ranks(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double shared = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
        i = j + 1;
    }
    return ranks;
}

struct RewardReport {
    std::uint64_t candidate_id = 0;
    RawScores raw{};
    std::array<double, kVerifierCount> ranks{};
    double ensemble = 0.0;
};

/// Rank ensemble R = -(sum of active ranks) / (number of active verifiers).
/// Ranks are reported for every verifier; only the active ones enter R. Output order follows
/// the input order. When `ids` is empty, candidate ids are the input positions.
inline std::vector<RewardReport> rank_ensemble(std::span<const RawScores> scores,
                                               const VerifierConfig& cfg = {},
                                               std::span<const std::uint64_t> ids = {}) {
    cfg.validate();
    require(!scores.empty(), "rank_ensemble: need at least one candidate");
    require(ids.empty() || ids.size() == scores.size(), "rank_ensemble: id count mismatch");
    const std::size_t n = scores.size();
    std::vector<RewardReport> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (double v : scores[i])
            if (std::isnan(v)) throw Error("rank_ensemble: NaN raw score");
        out[i].candidate_id = ids.empty() ? i : ids[i];
        out[i].raw = scores[i];
    }
    std::vector<double> column(n);
    for (std::size_t v = 0; v < kVerifierCount; ++v) {
        for (std::size_t i = 0; i < n; ++i) column[i] = scores[i][v];
        const auto ranks = average_ranks(column);
        for (std::size_t i = 0; i < n; ++i) out[i].ranks[v] = ranks[i];
    }
    const double divisor = static_cast<double>(cfg.count());
    for (auto& r : out) {
        double sum = 0.0;
        for (std::size_t v = 0; v < kVerifierCount; ++v)
            if (cfg.active[v]) sum += r.ranks[v];
        r.ensemble = -sum / divisor;
    }
    return out;
}

} // namespace ttsflow
