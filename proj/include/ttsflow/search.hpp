#pragma once

// Perturb-rollout-evaluate-select search over the ODE trajectory, plus the matched-compute
// baselines it is compared against.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "budget.hpp"
#include "error.hpp"
#include "flow.hpp"
#include "rng.hpp"
#include "task.hpp"
#include "verifiers.hpp"

namespace ttsflow {

/// K rounds evenly spaced in (0.15, 0.95]: the midpoints of K equal bins, earliest round at
/// the largest time, each snapped to the T-step grid.
inline std::vector<double> default_intervention_times(int K, int T) {
    std::vector<double> times;
    for (int k = 1; k <= K; ++k) {
        const double t = 0.15 + 0.8 * (static_cast<double>(K - k) + 0.5) / K;
        const double snapped = std::round(t * T) / T;
        if (!times.empty() && snapped >= times.back())
            throw Error("default intervention times collide on a " + std::to_string(T) + "-step grid");
        times.push_back(snapped);
    }
    return times;
}

struct TtsConfig {
    int K = 0;  // intervention rounds
    int N = 7;  // candidates per round, parents included
    int M = 2;  // survivors per round
    int S = 3;  // rollout steps per candidate
    int T = 50; // base ODE steps
    SigmaSchedule sigma = SigmaSchedule::linear(0.3, 0.1);
    std::vector<double> intervention_times;  // empty: default_intervention_times(K, T)
    bool keep_parents = true;
    double mutate_fraction = 1.0;
    VerifierConfig verifiers;

    void validate() const {
        require(K >= 0, "TtsConfig: K must be nonnegative");
        require(M >= 1 && M < N, "TtsConfig: need 1 <= M < N");
        require(S >= 0, "TtsConfig: S must be nonnegative");
        require(T >= 1, "TtsConfig: T must be positive");
        require(mutate_fraction >= 0.0 && mutate_fraction <= 1.0,
                "TtsConfig: mutate_fraction must lie in [0, 1]");
        sigma.validate();
        verifiers.validate();
        if (!intervention_times.empty())
            require(static_cast<int>(intervention_times.size()) == K,
                    "TtsConfig: intervention_times must have K entries");
        (void)intervention_indices();
    }

    [[nodiscard]] std::vector<double> times() const {
        return intervention_times.empty() ? default_intervention_times(K, T) : intervention_times;
    }

    /// Grid indices of the intervention times on StepSchedule::uniform(T).
    [[nodiscard]] std::vector<std::size_t> intervention_indices() const {
        const auto schedule = StepSchedule::uniform(T);
        std::vector<std::size_t> idx;
        for (double t : times()) {
            require(t > 0.0 && t <= 1.0, "TtsConfig: intervention times must lie in (0, 1]");
            const auto i = schedule.index_of(t);
            require(i.has_value(), "TtsConfig: intervention time " + std::to_string(t) +
                                       " is not on the step grid");
            require(idx.empty() || *i > idx.back(),
                    "TtsConfig: intervention times must strictly decrease");
            idx.push_back(*i);
        }
        return idx;
    }
};

struct Candidate {
    std::uint64_t id = 0;
    LatentState state;
    Vector preview;  // estimated x0 the verifiers scored
    std::optional<RewardReport> report;
    bool survived = false;
};

struct CandidateSet {
    int generation = 0;
    double time = 1.0;
    std::vector<Candidate> members;
};

struct PerturbOptions {
    bool keep_parents = true;
    double mutate_fraction = 1.0;
};

/// Builds exactly n candidates from the parents. With keep_parents the parents come first as
/// unperturbed copies; the remaining slots go round-robin over the parents, the first
/// round(mutate_fraction * slots) of them receiving z + sigma * eps. Each candidate's noise
/// comes from `key` extended by its own seed_path. Ids are drawn from next_id.
inline CandidateSet perturb(const CandidateSet& parents, double sigma, int n,
                            const PerturbOptions& opts, const SeedKey& key,
                            std::uint64_t& next_id) {
    require(!parents.members.empty(), "perturb: parent set is empty");
    require(std::isfinite(sigma) && sigma >= 0.0, "perturb: sigma must be nonnegative");
    require(n >= 1, "perturb: need at least one candidate");
    const std::size_t np = parents.members.size();
    const std::size_t total = static_cast<std::size_t>(n);
    if (opts.keep_parents) require(np < total, "perturb: kept parents fill every slot");

    CandidateSet out;
    out.generation = parents.generation;
    out.time = parents.time;
    out.members.reserve(total);

    auto spawn = [&](const Candidate& parent, std::size_t slot) {
        Candidate c;
        c.id = next_id++;
        c.state = parent.state;
        c.state.parent = parent.id;
        c.state.seed_path.push_back(slot);
        return c;
    };

    std::size_t slot = 0;
    if (opts.keep_parents)
        for (const auto& p : parents.members) out.members.push_back(spawn(p, slot++));

    const std::size_t children = total - out.members.size();
    const auto mutated = static_cast<std::size_t>(std::llround(opts.mutate_fraction * children));
    for (std::size_t j = 0; j < children; ++j) {
        Candidate c = spawn(parents.members[j % np], slot++);
        if (j < mutated) {
            RngStream rng(key.extend(c.state.seed_path));
            c.state.value += sigma * rng.normal_vector(c.state.value.size());
        }
        out.members.push_back(std::move(c));
    }
    return out;
}

/// Multi-step partial denoising estimate of x0: S plain Euler steps of size delta (no score
/// term), then the lookahead. Charged to the rollout phase.
inline Vector mspde(const LatentState& candidate, const FlowSpec& spec, int S, double delta,
                    BudgetLedger& ledger) {
    require(S >= 0, "mspde: S must be nonnegative");
    require(std::isfinite(delta) && delta > 0.0, "mspde: step size must be positive");
    if (candidate.time - S * delta < -kTimeSnap)
        throw Error("mspde: rollout of " + std::to_string(S) + " steps from t=" +
                    std::to_string(candidate.time) + " passes t = 0");
    LatentState x = candidate;
    for (int s = 0; s < S; ++s) x = ode_step(x, spec, -delta, ledger, Phase::rollout);
    return lookahead(x, spec, ledger, Phase::rollout);
}

namespace detail {

inline bool ranks_before(const Candidate& a, const Candidate& b) {
    if (a.report->ensemble != b.report->ensemble) return a.report->ensemble > b.report->ensemble;
    return a.id < b.id;
}

} // namespace detail

/// The M members with the largest ensemble reward, best first; equal rewards go to the
/// lower candidate id.
inline CandidateSet select_top_m(const CandidateSet& candidates, int M) {
    require(M >= 1 && static_cast<std::size_t>(M) <= candidates.members.size(),
            "select_top_m: M must lie in [1, candidate count]");
    for (const auto& c : candidates.members)
        require(c.report.has_value(), "select_top_m: candidate " + std::to_string(c.id) +
                                          " has no reward report");
    std::vector<Candidate> sorted = candidates.members;
    std::stable_sort(sorted.begin(), sorted.end(), detail::ranks_before);
    sorted.resize(static_cast<std::size_t>(M));
#ifndef NDEBUG
    {
        // brute force: repeated argmax over the remaining pool
        std::vector<Candidate> pool = candidates.members;
        for (int m = 0; m < M; ++m) {
            auto best = pool.begin();
            for (auto it = pool.begin(); it != pool.end(); ++it)
                if (detail::ranks_before(*it, *best)) best = it;
            if (best->id != sorted[static_cast<std::size_t>(m)].id)
                throw Error("select_top_m: disagrees with brute-force selection");
            pool.erase(best);
        }
    }
#endif
    CandidateSet out;
    out.generation = candidates.generation;
    out.time = candidates.time;
    out.members = std::move(sorted);
    for (auto& c : out.members) c.survived = true;
    return out;
}

struct Trace {
    std::vector<CandidateSet> rounds;  // every scored candidate, with survived flags
};

struct TtsResult {
    Vector x0;
    std::uint64_t final_parent = 0;  // candidate carried into the final solve
    Trace trace;
    BudgetLedger ledger;
};

inline Vector initial_noise(std::uint64_t seed, std::uint64_t index, Eigen::Index dim) {
    RngStream rng(SeedKey(seed, Substream::init).child(index));
    return rng.normal_vector(dim);
}

/// Scores every candidate through MSPDE and the verifier ensemble, in place.
inline void evaluate_candidates(CandidateSet& set, const RestorationInstance& instance,
                                const FlowSpec& spec, int S, double delta,
                                const VerifierConfig& verifiers, BudgetLedger& ledger) {
    std::vector<RawScores> raw;
    std::vector<std::uint64_t> ids;
    raw.reserve(set.members.size());
    for (auto& c : set.members) {
        c.preview = mspde(c.state, spec, S, delta, ledger);
        raw.push_back(score_candidate(c.preview, instance, verifiers));
        ids.push_back(c.id);
    }
    const auto reports = rank_ensemble(raw, verifiers, ids);
    for (std::size_t i = 0; i < reports.size(); ++i) set.members[i].report = reports[i];
}

/// ODE-adapted test-time scaling. Starting from one noise sample, each round advances the
/// population along the ODE to t_k, perturbs it into N candidates, previews each with MSPDE,
/// ranks them with the verifier ensemble and keeps the top M. The best survivor of the last
/// round is solved to t = 0.
inline TtsResult tts_run(const RestorationInstance& instance, const FlowSpec& spec,
                         const TtsConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const StepSchedule schedule = StepSchedule::uniform(cfg.T);
    const auto idx = cfg.intervention_indices();
    const double delta = 1.0 / cfg.T;
    const PerturbOptions opts{cfg.keep_parents, cfg.mutate_fraction};

    TtsResult result;
    std::uint64_t next_id = 0;
    std::vector<Candidate> population(1);
    population[0].id = next_id++;
    population[0].state = LatentState{initial_noise(seed, 0, spec.dim()), 1.0, {0}, std::nullopt};

    std::size_t cursor = 0;
    for (int k = 1; k <= cfg.K; ++k) {
        try {
            const std::size_t target = idx[static_cast<std::size_t>(k - 1)];
            for (auto& p : population)
                p.state = ode_solve(p.state, spec, schedule, cursor, target, result.ledger,
                                    Phase::advance);
            cursor = target;

            CandidateSet parents{k, schedule.at(cursor), std::move(population)};
            CandidateSet candidates =
                perturb(parents, cfg.sigma.round(k, cfg.K), cfg.N, opts,
                        SeedKey(seed, Substream::perturb).child(static_cast<std::uint64_t>(k)),
                        next_id);
            evaluate_candidates(candidates, instance, spec, cfg.S, delta, cfg.verifiers,
                                result.ledger);
            CandidateSet survivors = select_top_m(candidates, cfg.M);
            for (auto& c : candidates.members)
                for (const auto& s : survivors.members)
                    if (s.id == c.id) c.survived = true;
            result.trace.rounds.push_back(std::move(candidates));
            population = std::move(survivors.members);
        } catch (const Error& e) {
            throw Error("tts round " + std::to_string(k) + ": " + e.what());
        }
    }

    result.final_parent = population.front().id;
    const LatentState final = ode_solve(population.front().state, spec, schedule, cursor,
                                        schedule.steps(), result.ledger, Phase::final_solve);
    result.x0 = final.value;
    return result;
}

/// Plain ODE sample from the seed's first noise draw.
inline Vector plain_ode_sample(const FlowSpec& spec, int T, std::uint64_t seed,
                               BudgetLedger& ledger) {
    const StepSchedule schedule = StepSchedule::uniform(T);
    LatentState z{initial_noise(seed, 0, spec.dim()), 1.0, {0}, std::nullopt};
    return ode_solve(z, spec, schedule, 0, schedule.steps(), ledger, Phase::final_solve).value;
}

/// Closed-form budget of tts_run. Velocity evaluations per phase:
///   advance  idx_1 + M * (idx_K - idx_1)
///   rollout  sum_k N * (S + [t_k - S dt > 0])
///   final    T - idx_K
/// which totals T + (M - 1)(idx_K - idx_1) + sum_k N (S + 1) when no rollout reaches t = 0.
/// No score evaluations are spent.
inline BudgetLedger nfe_formula(const TtsConfig& cfg) {
    cfg.validate();
    BudgetLedger predicted;
    const auto T = static_cast<std::uint64_t>(cfg.T);
    if (cfg.K == 0) {
        predicted.charge_velocity(Phase::final_solve, T);
        return predicted;
    }
    const auto idx = cfg.intervention_indices();
    const auto N = static_cast<std::uint64_t>(cfg.N);
    const auto M = static_cast<std::uint64_t>(cfg.M);
    const auto S = static_cast<std::uint64_t>(cfg.S);
    predicted.charge_velocity(Phase::advance, idx.front() + M * (idx.back() - idx.front()));
    for (std::size_t i : idx) {
        require(i + S <= T, "nfe_formula: rollout passes t = 0");
        predicted.charge_velocity(Phase::rollout, N * (S + (i + S < T ? 1 : 0)));
    }
    predicted.charge_velocity(Phase::final_solve, T - idx.back());
    return predicted;
}

struct BaselineResult {
    Vector x0;
    std::size_t chosen = 0;
    std::vector<RewardReport> reports;
    BudgetLedger ledger;
};

namespace detail {

inline std::size_t argmax_ensemble(const std::vector<RewardReport>& reports) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < reports.size(); ++i)
        if (reports[i].ensemble > reports[best].ensemble) best = i;
    return best;
}

} // namespace detail

/// n independent full ODE solves; the ensemble argmax wins. Scoring at t = 0 is free, so
/// the cost is n * T velocity evaluations.
inline BaselineResult best_of_n(const RestorationInstance& instance, const FlowSpec& spec, int n,
                                const VerifierConfig& verifiers, int T, std::uint64_t seed) {
    require(n >= 1, "best_of_n: n must be at least 1");
    const StepSchedule schedule = StepSchedule::uniform(T);
    BaselineResult out;
    std::vector<Vector> samples;
    std::vector<RawScores> raw;
    for (int i = 0; i < n; ++i) {
        LatentState z{initial_noise(seed, static_cast<std::uint64_t>(i), spec.dim()), 1.0,
                      {static_cast<std::uint64_t>(i)}, std::nullopt};
        z = ode_solve(z, spec, schedule, 0, schedule.steps(), out.ledger, Phase::final_solve);
        samples.push_back(lookahead(z, spec, out.ledger, Phase::rollout));
        raw.push_back(score_candidate(samples.back(), instance, verifiers));
    }
    out.reports = rank_ensemble(raw, verifiers);
    out.chosen = detail::argmax_ensemble(out.reports);
    out.x0 = samples[out.chosen];
    return out;
}

struct ParticleConfig {
    int n = 8;
    int survivors = 1;
    int T = 50;
    std::vector<double> resample_times;
    SigmaSchedule sigma = SigmaSchedule::constant(0.5);
    VerifierConfig verifiers;
};

/// Population of SDE particles. At each resample time the particles are previewed with the
/// lookahead, the top `survivors` are kept and copied round-robin back up to n, each copy on
/// a fresh noise stream. There is no perturbation operator; diversity comes from the SDE.
inline BaselineResult particle_sampling(const RestorationInstance& instance, const FlowSpec& spec,
                                        const ParticleConfig& cfg, std::uint64_t seed) {
    require(cfg.n >= 1, "particle_sampling: need at least one particle");
    require(cfg.survivors >= 1 && cfg.survivors <= cfg.n,
            "particle_sampling: survivors must lie in [1, n]");
    cfg.sigma.validate();
    cfg.verifiers.validate();
    const StepSchedule schedule = StepSchedule::uniform(cfg.T);
    std::vector<std::size_t> idx;
    for (double t : cfg.resample_times) {
        const auto i = schedule.index_of(t);
        require(i.has_value() && t > 0.0, "particle_sampling: resample time off the grid");
        require(idx.empty() || *i > idx.back(), "particle_sampling: resample times must decrease");
        idx.push_back(*i);
    }

    struct Particle {
        LatentState state;
        RngStream rng;
    };
    const SeedKey sde_key(seed, Substream::sde);
    std::vector<Particle> particles;
    for (int i = 0; i < cfg.n; ++i) {
        LatentState z{initial_noise(seed, static_cast<std::uint64_t>(i), spec.dim()), 1.0,
                      {static_cast<std::uint64_t>(i)}, std::nullopt};
        RngStream rng(sde_key.extend(z.seed_path));
        particles.push_back({std::move(z), std::move(rng)});
    }

    BaselineResult out;
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        for (auto& p : particles)
            p.state = sde_solve(p.state, spec, schedule, cursor, idx[k], cfg.sigma, p.rng,
                                out.ledger, Phase::advance);
        cursor = idx[k];
        std::vector<RawScores> raw;
        for (auto& p : particles)
            raw.push_back(score_candidate(lookahead(p.state, spec, out.ledger, Phase::rollout),
                                          instance, cfg.verifiers));
        const auto reports = rank_ensemble(raw, cfg.verifiers);
        std::vector<std::size_t> order(particles.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return reports[a].ensemble > reports[b].ensemble;
        });
        std::vector<Particle> next;
        for (int j = 0; j < cfg.n; ++j) {
            LatentState s = particles[order[static_cast<std::size_t>(j % cfg.survivors)]].state;
            s.seed_path.push_back(k + 1);
            s.seed_path.push_back(static_cast<std::uint64_t>(j));
            RngStream rng(sde_key.extend(s.seed_path));
            next.push_back({std::move(s), std::move(rng)});
        }
        particles = std::move(next);
    }
    std::vector<Vector> samples;
    std::vector<RawScores> raw;
    for (auto& p : particles) {
        p.state = sde_solve(p.state, spec, schedule, cursor, schedule.steps(), cfg.sigma, p.rng,
                            out.ledger, Phase::final_solve);
        samples.push_back(lookahead(p.state, spec, out.ledger, Phase::rollout));
        raw.push_back(score_candidate(samples.back(), instance, cfg.verifiers));
    }
    out.reports = rank_ensemble(raw, cfg.verifiers);
    out.chosen = detail::argmax_ensemble(out.reports);
    out.x0 = samples[out.chosen];
    return out;
}

} // namespace ttsflow
