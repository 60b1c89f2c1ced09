#pragma once

// Closed-form linear-interpolant flows over isotropic Gaussian mixtures.
//
// Convention: x_t = (1 - t) * x0 + t * eps, eps ~ N(0, I), so t = 1 is pure noise and t = 0 is
// data. Sampling runs backwards in time with dt < 0.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "budget.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace ttsflow {

using Vector = Eigen::VectorXd;

/// Lower clamp on marginal variances.
inline constexpr double kVarianceFloor = 1e-12;
/// Below this time the score must come from the mixture form, not the velocity relation.
inline constexpr double kScoreTimeFloor = 1e-6;
/// Times closer than this to a grid point or to zero are snapped onto it.
inline constexpr double kTimeSnap = 1e-12;

struct MixtureComponent {
    double weight = 1.0;
    Vector mean;
    double scale = 1.0;  // isotropic standard deviation
};

/// Data distribution of a flow: an isotropic Gaussian mixture in R^dim.
class FlowSpec {
public:
    FlowSpec() = default;

    explicit FlowSpec(std::vector<MixtureComponent> components)
        : components_(std::move(components)) {
        require(!components_.empty(), "FlowSpec: at least one component is required");
        dim_ = components_.front().mean.size();
        require(dim_ > 0, "FlowSpec: dimension must be positive");
        double total = 0.0;
        for (const auto& c : components_) {
            require(c.mean.size() == dim_, "FlowSpec: component means must share one dimension");
            require(c.mean.allFinite(), "FlowSpec: component mean is not finite");
            require(std::isfinite(c.scale) && c.scale > 0.0, "FlowSpec: scales must be positive");
            require(std::isfinite(c.weight) && c.weight >= 0.0,
                    "FlowSpec: weights must be nonnegative");
            total += c.weight;
        }
        require(std::abs(total - 1.0) <= 1e-12, "FlowSpec: weights must sum to 1");
    }

    static FlowSpec gaussian(Vector mean, double scale) {
        return FlowSpec({MixtureComponent{1.0, std::move(mean), scale}});
    }

    [[nodiscard]] Eigen::Index dim() const { return dim_; }
    [[nodiscard]] const std::vector<MixtureComponent>& components() const { return components_; }

private:
    std::vector<MixtureComponent> components_;
    Eigen::Index dim_ = 0;
};

struct MarginalComponent {
    double weight;
    Vector mean;
    double variance;
};

inline void check_time(double t) {
    require(std::isfinite(t) && t >= 0.0 && t <= 1.0, "time must lie in [0, 1]");
}

/// Per-component law of x_t: N((1-t) mu_c, ((1-t)^2 sigma_c^2 + t^2) I) with the prior weights.
inline std::vector<MarginalComponent> marginal_params(const FlowSpec& spec, double t) {
    check_time(t);
    const double a = 1.0 - t;
    std::vector<MarginalComponent> out;
    out.reserve(spec.components().size());
    for (const auto& c : spec.components()) {
        const double var = std::max(a * a * c.scale * c.scale + t * t, kVarianceFloor);
        out.push_back({c.weight, a * c.mean, var});
    }
    return out;
}

namespace detail {

/// log w_c + log N(x; m_c, v_c I) for each component.
inline std::vector<double> component_log_terms(const std::vector<MarginalComponent>& marg,
                                               const Vector& x) {
    const double d = static_cast<double>(x.size());
    std::vector<double> terms;
    terms.reserve(marg.size());
    for (const auto& c : marg) {
        const double sq = (x - c.mean).squaredNorm();
        const double logw = c.weight > 0.0 ? std::log(c.weight)
                                           : -std::numeric_limits<double>::infinity();
        terms.push_back(logw - 0.5 * sq / c.variance -
                        0.5 * d * std::log(2.0 * std::numbers::pi * c.variance));
    }
    return terms;
}

inline double log_sum_exp(const std::vector<double>& v) {
    const double hi = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(hi)) return hi;
    double s = 0.0;
    for (double x : v) s += std::exp(x - hi);
    return hi + std::log(s);
}

inline std::vector<double> responsibilities(const std::vector<MarginalComponent>& marg,
                                            const Vector& x) {
    auto terms = component_log_terms(marg, x);
    const double norm = log_sum_exp(terms);
    for (double& r : terms) r = std::exp(r - norm);
    return terms;
}

inline void check_point(const FlowSpec& spec, const Vector& x) {
    require(x.size() == spec.dim(), "point dimension does not match the flow");
}

} // namespace detail

/// Analytic log p_t(x).
inline double log_density(const FlowSpec& spec, const Vector& x, double t) {
    detail::check_point(spec, x);
    return detail::log_sum_exp(detail::component_log_terms(marginal_params(spec, t), x));
}

/// u_t(x) = E[eps - x0 | x_t = x]. Each component contributes its Gaussian conditional
/// expectation (t - a sigma^2)/v (x - a mu) - mu, mixed by posterior responsibilities.
inline Vector velocity(const FlowSpec& spec, const Vector& x, double t) {
    detail::check_point(spec, x);
    const auto marg = marginal_params(spec, t);
    const auto resp = detail::responsibilities(marg, x);
    const double a = 1.0 - t;
    Vector u = Vector::Zero(x.size());
    for (std::size_t c = 0; c < marg.size(); ++c) {
        if (resp[c] == 0.0) continue;
        const auto& comp = spec.components()[c];
        const double gain = (t - a * comp.scale * comp.scale) / marg[c].variance;
        u += resp[c] * (gain * (x - marg[c].mean) - comp.mean);
    }
    return u;
}

/// Gradient of log p_t, from the mixture directly. Valid on all of [0, 1].
inline Vector score(const FlowSpec& spec, const Vector& x, double t) {
    detail::check_point(spec, x);
    const auto marg = marginal_params(spec, t);
    const auto resp = detail::responsibilities(marg, x);
    Vector s = Vector::Zero(x.size());
    for (std::size_t c = 0; c < marg.size(); ++c) {
        if (resp[c] == 0.0) continue;
        s -= resp[c] * (x - marg[c].mean) / marg[c].variance;
    }
    return s;
}

/// Score recovered from the velocity: grad log p_t(x) = -((1 - t) u_t(x) + x) / t.
/// Holds for any data law under the linear interpolant; undefined near t = 0.
inline Vector score_from_velocity(const FlowSpec& spec, const Vector& x, double t) {
    check_time(t);
    if (t < kScoreTimeFloor)
        throw Error("score_from_velocity: t below the time floor, use the mixture score");
    return -((1.0 - t) * velocity(spec, x, t) + x) / t;
}

struct LatentState {
    Vector value;
    double time = 1.0;
    std::vector<std::uint64_t> seed_path;
    std::optional<std::uint64_t> parent;
};

inline void check_state(const LatentState& s) {
    check_time(s.time);
    require(s.value.allFinite(), "latent state has non-finite entries");
}

/// Strictly decreasing time grid from 1 to 0.
class StepSchedule {
public:
    explicit StepSchedule(std::vector<double> times) : times_(std::move(times)) {
        require(times_.size() >= 2, "StepSchedule: need at least two times");
        require(times_.front() == 1.0 && times_.back() == 0.0,
                "StepSchedule: must start at 1 and end at 0");
        for (std::size_t i = 1; i < times_.size(); ++i)
            require(times_[i] < times_[i - 1], "StepSchedule: times must strictly decrease");
    }

    static StepSchedule uniform(int steps) {
        require(steps >= 1, "StepSchedule: step count must be positive");
        std::vector<double> times(static_cast<std::size_t>(steps) + 1);
        for (int i = 0; i <= steps; ++i)
            times[static_cast<std::size_t>(i)] = static_cast<double>(steps - i) / steps;
        return StepSchedule(std::move(times));
    }

    [[nodiscard]] std::size_t steps() const { return times_.size() - 1; }
    [[nodiscard]] double at(std::size_t i) const { return times_.at(i); }
    [[nodiscard]] const std::vector<double>& times() const { return times_; }

    /// Grid index of time t, if t lies on the grid.
    [[nodiscard]] std::optional<std::size_t> index_of(double t, double tol = 1e-9) const {
        for (std::size_t i = 0; i < times_.size(); ++i)
            if (std::abs(times_[i] - t) <= tol) return i;
        return std::nullopt;
    }

private:
    std::vector<double> times_;
};

/// Noise level as a function of progress in [0, 1]: constant, or linear from start to end.
struct SigmaSchedule {
    enum class Kind { constant, linear };
    Kind kind = Kind::constant;
    double start = 0.0;
    double end = 0.0;

    static SigmaSchedule constant(double s) { return {Kind::constant, s, s}; }
    static SigmaSchedule linear(double from, double to) { return {Kind::linear, from, to}; }

    [[nodiscard]] double at(double progress) const {
        if (kind == Kind::constant) return start;
        return start + (end - start) * std::clamp(progress, 0.0, 1.0);
    }

    /// sigma_k for round k in 1..K.
    [[nodiscard]] double round(int k, int K) const {
        return at(K <= 1 ? 0.0 : static_cast<double>(k - 1) / (K - 1));
    }

    void validate() const {
        require(std::isfinite(start) && std::isfinite(end) && start >= 0.0 && end >= 0.0,
                "sigma schedule must be nonnegative");
    }
};

namespace detail {

inline double advance_time(double time, double dt) {
    require(std::isfinite(dt) && dt < 0.0, "step size dt must be negative");
    double next = time + dt;
    if (std::abs(next) < kTimeSnap) next = 0.0;
    if (next < 0.0) throw Error("step would move past t = 0");
    return next;
}

} // namespace detail

/// One Euler step x <- x + u_t(x) dt. Charges one velocity evaluation.
inline LatentState ode_step(const LatentState& x, const FlowSpec& spec, double dt,
                            BudgetLedger& ledger, Phase phase) {
    const double next = detail::advance_time(x.time, dt);
    LatentState out = x;
    out.value = x.value + velocity(spec, x.value, x.time) * dt;
    out.time = next;
    ledger.charge_velocity(phase);
    return out;
}

/// One Euler-Maruyama step of the marginal-preserving reverse SDE
///   x <- x + (u - sigma^2/2 * score) dt + sigma sqrt(|dt|) xi.
/// Charges one velocity and one score evaluation. sigma = 0 reproduces ode_step exactly.
inline LatentState sde_step(const LatentState& x, const FlowSpec& spec, double dt, double sigma,
                            RngStream& rng, BudgetLedger& ledger, Phase phase) {
    require(std::isfinite(sigma) && sigma >= 0.0, "sde_step: sigma must be nonnegative");
    const double next = detail::advance_time(x.time, dt);
    const Vector u = velocity(spec, x.value, x.time);
    const Vector s = score(spec, x.value, x.time);
    const Vector xi = rng.normal_vector(x.value.size());
    LatentState out = x;
    if (sigma == 0.0) {
        out.value = x.value + u * dt;
    } else {
        const Vector drift = u - 0.5 * sigma * sigma * s;
        out.value = x.value + drift * dt + sigma * std::sqrt(-dt) * xi;
    }
    out.time = next;
    ledger.charge_velocity(phase);
    ledger.charge_score(phase);
    return out;
}

/// One-step extrapolation to t = 0: x - t u_t(x), which is E[x0 | x_t]. Free at t = 0.
inline Vector lookahead(const LatentState& x, const FlowSpec& spec, BudgetLedger& ledger,
                        Phase phase) {
    check_time(x.time);
    if (x.time == 0.0) return x.value;
    ledger.charge_velocity(phase);
    return x.value - x.time * velocity(spec, x.value, x.time);
}

/// Euler integration along the schedule grid from index `from` to index `to` (from <= to).
inline LatentState ode_solve(LatentState x, const FlowSpec& spec, const StepSchedule& schedule,
                             std::size_t from, std::size_t to, BudgetLedger& ledger,
                             Phase phase) {
    require(from <= to && to <= schedule.steps(), "ode_solve: bad grid range");
    for (std::size_t i = from; i < to; ++i) {
        x = ode_step(x, spec, schedule.at(i + 1) - schedule.at(i), ledger, phase);
        x.time = schedule.at(i + 1);
    }
    return x;
}

/// Euler-Maruyama along the grid; sigma is read from the schedule at progress 1 - t.
inline LatentState sde_solve(LatentState x, const FlowSpec& spec, const StepSchedule& schedule,
                             std::size_t from, std::size_t to, const SigmaSchedule& sigma,
                             RngStream& rng, BudgetLedger& ledger, Phase phase) {
    require(from <= to && to <= schedule.steps(), "sde_solve: bad grid range");
    for (std::size_t i = from; i < to; ++i) {
        const double t = schedule.at(i);
        x = sde_step(x, spec, schedule.at(i + 1) - t, sigma.at(1.0 - t), rng, ledger, phase);
        x.time = schedule.at(i + 1);
    }
    return x;
}

} // namespace ttsflow
