#pragma once

// Experiment sweeps: a ladder of search budgets, matched-compute baselines and verifier
// ablations, run over a shared instance suite and compared instance by instance.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "budget.hpp"
#include "error.hpp"
#include "search.hpp"
#include "stats.hpp"
#include "task.hpp"
#include "verifiers.hpp"

namespace ttsflow {

inline constexpr const char* kWorkersEnv = "TTSFLOW_WORKERS";

/// Worker count from the environment, else the hardware concurrency.
inline int default_workers() {
    if (const char* env = std::getenv(kWorkersEnv)) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, count) on up to `workers` threads. Results must be written to
/// per-index slots; the first exception by index is rethrown.
inline void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn) {
    if (count == 0) return;
    const auto threads = static_cast<std::size_t>(std::clamp<long>(workers, 1, static_cast<long>(count)));
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (threads == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

struct MethodSpec {
    enum class Kind { tts, best_of_n, particle };
    Kind kind = Kind::tts;
    std::string label;
    TtsConfig tts;
    int n = 1;                // best_of_n sample count
    ParticleConfig particle;  // particle baseline settings
    int T = 50;
};

struct MethodOutcome {
    Vector x0;
    BudgetLedger ledger;
};

inline MethodOutcome run_method(const MethodSpec& m, const RestorationInstance& inst,
                                std::uint64_t seed) {
    switch (m.kind) {
        case MethodSpec::Kind::tts: {
            auto r = tts_run(inst, inst.posterior, m.tts, seed);
            return {std::move(r.x0), r.ledger};
        }
        case MethodSpec::Kind::best_of_n: {
            auto r = best_of_n(inst, inst.posterior, m.n, m.tts.verifiers, m.T, seed);
            return {std::move(r.x0), r.ledger};
        }
        case MethodSpec::Kind::particle: {
            auto r = particle_sampling(inst, inst.posterior, m.particle, seed);
            return {std::move(r.x0), r.ledger};
        }
    }
    throw Error("run_method: unknown method kind");
}

/// Final outputs of several methods on one instance, ranked together with the full ensemble.
/// Returns one reward per output in input order.
inline std::vector<double> arena_rewards(const RestorationInstance& inst,
                                         const std::vector<Vector>& outputs,
                                         const VerifierConfig& judge) {
    std::vector<RawScores> raw;
    raw.reserve(outputs.size());
    for (const auto& x : outputs) raw.push_back(score_candidate(x, inst, judge));
    const auto reports = rank_ensemble(raw, judge);
    std::vector<double> out;
    for (const auto& r : reports) out.push_back(r.ensemble);
    return out;
}

struct SweepConfig {
    std::uint64_t suite_seed = 2025;
    int suite_size = 200;
    SuiteConfig suite;
    std::uint64_t seed = 0;
    TtsConfig base;  // shared settings for every ladder point
    std::vector<std::pair<int, int>> ladder{{0, 7}, {2, 5}, {4, 7}, {10, 15}};  // (K, N)
    std::size_t reference = 2;  // ladder index compared against the baselines
    bool best_of_n = true;
    bool particle = true;
    std::vector<VerifierConfig> verifier_subsets{VerifierConfig{}};
    bool ablation = true;
    int repetitions = 1;
    bool blind = true;
    int workers = 1;
    double alpha_trend = 0.01;
    double alpha_baseline = 0.05;
    double nfe_tolerance = 0.05;

    void validate() const {
        require(!ladder.empty(), "sweep: ladder must be nonempty");
        require(reference < ladder.size(), "sweep: reference index outside the ladder");
        require(repetitions >= 1, "sweep: repetitions must be at least 1");
        require(suite_size >= 1, "sweep: suite size must be at least 1");
        require(!verifier_subsets.empty(), "sweep: need at least one verifier subset");
        for (const auto& v : verifier_subsets) v.validate();
    }
};

struct SweepRow {
    std::string label;
    std::string kind;  // tts, best_of_n, particle
    int K = 0, N = 0, M = 0, S = 0;
    std::string verifiers;
    double mean_reward = 0.0;
    double std_reward = 0.0;
    double nfe = 0.0;        // mean velocity evaluations per instance
    double score_evals = 0.0;  // mean score evaluations per instance
    RawScores mean_raw{};
    std::vector<double> rewards;  // per (repetition, instance), arena reward
};

struct SweepCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct SweepResult {
    std::vector<SweepRow> pareto;
    std::vector<SweepRow> ablation;
    std::vector<SweepCheck> checks;
    [[nodiscard]] bool all_pass() const {
        return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.pass; });
    }
};

inline TtsConfig ladder_config(const SweepConfig& cfg, std::size_t i, const VerifierConfig& v) {
    TtsConfig c = cfg.base;
    c.K = cfg.ladder[i].first;
    c.N = cfg.ladder[i].second;
    c.verifiers = v;
    c.verifiers.blind = cfg.blind;
    if (c.K == 0) c.intervention_times.clear();
    return c;
}

inline std::string ladder_label(const TtsConfig& c) {
    return c.K == 0 ? std::string("no_tts") : "tts_K" + std::to_string(c.K) + "_N" + std::to_string(c.N);
}

/// Methods compared in one arena: every ladder point per verifier subset, then the baselines
/// matched to the reference point of the first subset.
inline std::vector<MethodSpec> pareto_methods(const SweepConfig& cfg) {
    std::vector<MethodSpec> out;
    for (const auto& v : cfg.verifier_subsets)
        for (std::size_t i = 0; i < cfg.ladder.size(); ++i) {
            MethodSpec m;
            m.tts = ladder_config(cfg, i, v);
            m.T = m.tts.T;
            m.label = ladder_label(m.tts);
            if (cfg.verifier_subsets.size() > 1) m.label += "@" + m.tts.verifiers.label();
            out.push_back(std::move(m));
        }
    const TtsConfig ref = ladder_config(cfg, cfg.reference, cfg.verifier_subsets.front());
    const double ref_nfe = static_cast<double>(nfe_formula(ref).velocity_total());
    if (cfg.best_of_n) {
        MethodSpec m;
        m.kind = MethodSpec::Kind::best_of_n;
        m.tts = ref;
        m.T = ref.T;
        m.n = std::max(1, static_cast<int>(std::lround(ref_nfe / ref.T)));
        m.label = "best_of_" + std::to_string(m.n);
        out.push_back(std::move(m));
    }
    if (cfg.particle) {
        MethodSpec m;
        m.kind = MethodSpec::Kind::particle;
        m.tts = ref;
        m.T = ref.T;
        m.particle.T = ref.T;
        m.particle.verifiers = ref.verifiers;
        m.particle.n = std::max(1, static_cast<int>(std::lround(ref_nfe / (ref.T + ref.K))));
        m.particle.survivors = std::min(ref.M, m.particle.n);
        m.particle.resample_times = ref.times();
        m.n = m.particle.n;
        m.label = "particle_" + std::to_string(m.particle.n);
        out.push_back(std::move(m));
    }
    return out;
}

/// The reference point with each nonempty verifier subset.
inline std::vector<MethodSpec> ablation_methods(const SweepConfig& cfg) {
    std::vector<MethodSpec> out;
    for (unsigned mask = 1; mask < (1u << kVerifierCount); ++mask) {
        VerifierConfig v;
        for (std::size_t b = 0; b < kVerifierCount; ++b) v.active[b] = (mask >> b) & 1u;
        MethodSpec m;
        m.tts = ladder_config(cfg, cfg.reference, v);
        m.T = m.tts.T;
        m.label = m.tts.verifiers.label();
        out.push_back(std::move(m));
    }
    std::stable_sort(out.begin(), out.end(), [](const MethodSpec& a, const MethodSpec& b) {
        return a.tts.verifiers.count() < b.tts.verifiers.count();
    });
    return out;
}

/// Per-run seed shared by every method on the same (repetition, instance).
inline std::uint64_t run_seed(std::uint64_t seed, int repetition, std::uint64_t instance) {
    return seed + static_cast<std::uint64_t>(repetition) * 1000003ULL + instance;
}

namespace detail {

inline std::vector<SweepRow> run_arena(const std::vector<MethodSpec>& methods,
                                       const std::vector<RestorationInstance>& suite,
                                       const SweepConfig& cfg) {
    VerifierConfig judge;
    judge.blind = cfg.blind;
    const std::size_t per_rep = suite.size();
    const std::size_t jobs = per_rep * static_cast<std::size_t>(cfg.repetitions);
    // rewards[job][method], raw[job][method], ledgers[job][method]
    std::vector<std::vector<double>> rewards(jobs);
    std::vector<std::vector<RawScores>> raw(jobs);
    std::vector<std::vector<BudgetLedger>> ledgers(jobs);
    parallel_for(jobs, cfg.workers, [&](std::size_t job) {
        const int rep = static_cast<int>(job / per_rep);
        const auto& inst = suite[job % per_rep];
        const auto seed = run_seed(cfg.seed, rep, inst.id);
        std::vector<Vector> outputs;
        for (const auto& m : methods) {
            auto o = run_method(m, inst, seed);
            raw[job].push_back(score_candidate(o.x0, inst, judge));
            ledgers[job].push_back(o.ledger);
            outputs.push_back(std::move(o.x0));
        }
        rewards[job] = arena_rewards(inst, outputs, judge);
    });

    std::vector<SweepRow> rows;
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        const auto& m = methods[mi];
        SweepRow row;
        row.label = m.label;
        row.kind = m.kind == MethodSpec::Kind::tts ? "tts"
                   : m.kind == MethodSpec::Kind::best_of_n ? "best_of_n" : "particle";
        row.K = m.kind == MethodSpec::Kind::best_of_n ? 0 : m.tts.K;
        row.N = m.kind == MethodSpec::Kind::tts ? m.tts.N : m.n;
        row.M = m.kind == MethodSpec::Kind::tts ? m.tts.M
                : m.kind == MethodSpec::Kind::particle ? m.particle.survivors : 1;
        row.S = m.kind == MethodSpec::Kind::tts ? m.tts.S : 0;
        row.verifiers = m.tts.verifiers.label();
        double vel = 0.0, sc = 0.0;
        for (std::size_t j = 0; j < jobs; ++j) {
            row.rewards.push_back(rewards[j][mi]);
            vel += static_cast<double>(ledgers[j][mi].velocity_total());
            sc += static_cast<double>(ledgers[j][mi].score_total());
            for (std::size_t v = 0; v < kVerifierCount; ++v) row.mean_raw[v] += raw[j][mi][v];
        }
        const double n = static_cast<double>(jobs);
        row.nfe = vel / n;
        row.score_evals = sc / n;
        for (double& v : row.mean_raw) v /= n;
        double mean = 0.0;
        for (double r : row.rewards) mean += r;
        mean /= n;
        double ss = 0.0;
        for (double r : row.rewards) ss += (r - mean) * (r - mean);
        row.mean_reward = mean;
        row.std_reward = jobs > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string fmt_short(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

} // namespace detail

inline SweepResult run_sweep(const SweepConfig& cfg) {
    cfg.validate();
    const auto suite = make_suite(cfg.suite_seed, cfg.suite_size, cfg.suite);
    SweepResult result;
    const auto methods = pareto_methods(cfg);
    result.pareto = detail::run_arena(methods, suite, cfg);
    if (cfg.ablation) result.ablation = detail::run_arena(ablation_methods(cfg), suite, cfg);

    // ladder rows of the first verifier subset come first, in ladder order
    const std::size_t L = cfg.ladder.size();
    {
        SweepCheck c{"ladder_monotone", true, ""};
        for (std::size_t i = 0; i < L; ++i) {
            c.detail += (i ? " <= " : "") + detail::fmt_short(result.pareto[i].mean_reward);
            if (i > 0 && result.pareto[i].mean_reward < result.pareto[i - 1].mean_reward) c.pass = false;
        }
        result.checks.push_back(std::move(c));
    }
    if (cfg.ladder.front().first == 0 && cfg.reference > 0) {
        const auto t = paired_t_test(result.pareto[cfg.reference].rewards, result.pareto[0].rewards);
        result.checks.push_back({"no_tts_vs_reference", t.p_greater < cfg.alpha_trend,
                                 "t=" + detail::fmt_short(t.t) + " p=" + detail::fmt_short(t.p_greater)});
    }
    for (std::size_t r = L * cfg.verifier_subsets.size(); r < result.pareto.size(); ++r) {
        if (result.pareto[r].kind != "best_of_n") continue;
        const auto& ref = result.pareto[cfg.reference];
        const auto& bon = result.pareto[r];
        const double gap = std::abs(bon.nfe - ref.nfe) / ref.nfe;
        const auto t = paired_t_test(ref.rewards, bon.rewards);
        result.checks.push_back({"matched_nfe", gap <= cfg.nfe_tolerance,
                                 detail::fmt_short(ref.nfe) + " vs " + detail::fmt_short(bon.nfe)});
        result.checks.push_back({"reference_vs_best_of_n", t.p_greater < cfg.alpha_baseline,
                                 "t=" + detail::fmt_short(t.t) + " p=" + detail::fmt_short(t.p_greater)});
    }
    return result;
}

} // namespace ttsflow
