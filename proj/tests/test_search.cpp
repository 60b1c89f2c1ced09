#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "ttsflow/search.hpp"

using namespace ttsflow;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

CandidateSet one_parent(const Vector& value, double t) {
    CandidateSet s;
    s.time = t;
    Candidate c;
    c.id = 0;
    c.state = LatentState{value, t, {0}, std::nullopt};
    s.members.push_back(c);
    return s;
}

Candidate with_reward(std::uint64_t id, double ensemble) {
    Candidate c;
    c.id = id;
    c.state = LatentState{vec({0.0}), 0.5, {}, {}};
    RewardReport r;
    r.candidate_id = id;
    r.ensemble = ensemble;
    c.report = r;
    return c;
}

// Sum over the actual trajectory of every velocity call, counted independently of the ledger.
std::uint64_t oracle_nfe(const TtsConfig& cfg) {
    if (cfg.K == 0) return static_cast<std::uint64_t>(cfg.T);
    const auto idx = cfg.intervention_indices();
    std::uint64_t total = idx[0];  // one trajectory until the first round
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const std::uint64_t rollout_end = idx[k] + static_cast<std::uint64_t>(cfg.S);
        const std::uint64_t per = static_cast<std::uint64_t>(cfg.S) + (rollout_end < static_cast<std::uint64_t>(cfg.T) ? 1 : 0);
        total += static_cast<std::uint64_t>(cfg.N) * per;
        if (k + 1 < idx.size()) total += static_cast<std::uint64_t>(cfg.M) * (idx[k + 1] - idx[k]);
    }
    return total + static_cast<std::uint64_t>(cfg.T) - idx.back();
}

} // namespace

TEST(InterventionTimes, EvenlySpacedOnGrid) {
    const auto times = default_intervention_times(4, 50);
    ASSERT_EQ(times.size(), 4u);
    for (std::size_t k = 0; k < times.size(); ++k) {
        EXPECT_GT(times[k], 0.15);
        EXPECT_LE(times[k], 0.95);
        EXPECT_NEAR(times[k] * 50, std::round(times[k] * 50), 1e-9);
        if (k) {
            EXPECT_LT(times[k], times[k - 1]);
        }
    }
    EXPECT_TRUE(default_intervention_times(0, 50).empty());
    EXPECT_THROW(default_intervention_times(10, 5), Error);
}

TEST(TtsConfig, Validation) {
    TtsConfig c;
    c.M = c.N;
    EXPECT_THROW(c.validate(), Error);
    c = TtsConfig{};
    c.K = 2;
    c.intervention_times = {0.5, 0.7};
    EXPECT_THROW(c.validate(), Error);
    c.intervention_times = {0.5, 0.33};
    EXPECT_THROW(c.validate(), Error);
    c.intervention_times = {0.5, 0.3};
    EXPECT_NO_THROW(c.validate());
}

TEST(Perturb, ZeroSigmaCopiesParents) {
    std::uint64_t next = 1;
    const auto parents = one_parent(vec({1.0, -2.0}), 0.6);
    const auto kids = perturb(parents, 0.0, 4, PerturbOptions{false, 1.0}, SeedKey{1}, next);
    ASSERT_EQ(kids.members.size(), 4u);
    for (const auto& c : kids.members) {
        EXPECT_EQ(c.state.value, parents.members[0].state.value);
        EXPECT_EQ(c.state.parent, std::optional<std::uint64_t>(0));
        EXPECT_EQ(c.state.seed_path.size(), 2u);
        EXPECT_EQ(c.state.seed_path[0], 0u);
    }
    EXPECT_EQ(next, 5u);
    EXPECT_THROW(perturb(parents, -0.1, 4, {}, SeedKey{1}, next), Error);
    EXPECT_THROW(perturb(CandidateSet{}, 0.1, 4, {}, SeedKey{1}, next), Error);
}

TEST(Perturb, RoundRobinAndKeptParents) {
    CandidateSet parents;
    parents.time = 0.5;
    for (std::uint64_t i = 0; i < 2; ++i) {
        Candidate c;
        c.id = 10 + i;
        c.state = LatentState{vec({static_cast<double>(i)}), 0.5, {i}, std::nullopt};
        parents.members.push_back(c);
    }
    std::uint64_t next = 20;
    const auto kids = perturb(parents, 0.5, 7, PerturbOptions{true, 1.0}, SeedKey{3}, next);
    ASSERT_EQ(kids.members.size(), 7u);
    EXPECT_EQ(kids.members[0].state.value, parents.members[0].state.value);
    EXPECT_EQ(kids.members[1].state.value, parents.members[1].state.value);
    for (std::size_t j = 2; j < 7; ++j) {
        EXPECT_EQ(*kids.members[j].state.parent, 10 + (j - 2) % 2);
        EXPECT_NE(kids.members[j].state.value, parents.members[(j - 2) % 2].state.value);
    }
    std::uint64_t next2 = 20;
    const auto half = perturb(parents, 0.5, 7, PerturbOptions{true, 0.4}, SeedKey{3}, next2);
    // round(0.4 * 5) = 2 mutated children, the rest are copies
    int mutated = 0;
    for (std::size_t j = 2; j < 7; ++j)
        mutated += half.members[j].state.value != parents.members[(j - 2) % 2].state.value;
    EXPECT_EQ(mutated, 2);
    EXPECT_THROW(perturb(parents, 0.5, 2, PerturbOptions{true, 1.0}, SeedKey{3}, next), Error);
}

TEST(Perturb, MonteCarloMeanAndVariance) {
    const auto parents = one_parent(vec({0.7}), 0.5);
    const int reps = 100'000;
    double s = 0.0, ss = 0.0;
    int count = 0;
    for (int r = 0; r < reps; ++r) {
        std::uint64_t next = 1;
        const auto kids = perturb(parents, 1.0, 3, PerturbOptions{false, 1.0},
                                  SeedKey{99, static_cast<std::uint64_t>(r)}, next);
        for (const auto& c : kids.members) {
            const double d = c.state.value[0] - 0.7;
            s += d;
            ss += d * d;
            ++count;
        }
    }
    const double mean = s / count, var = ss / count - mean * mean;
    EXPECT_LT(std::abs(mean), 3.0 / std::sqrt(count));
    EXPECT_LT(std::abs(var - 1.0), 3.0 * std::sqrt(2.0 / count));
}

TEST(Perturb, DeterministicPerKey) {
    const auto parents = one_parent(vec({0.1, 0.2, 0.3}), 0.5);
    std::uint64_t a = 1, b = 1;
    const auto x = perturb(parents, 0.4, 5, {}, SeedKey{7, 8}, a);
    const auto y = perturb(parents, 0.4, 5, {}, SeedKey{7, 8}, b);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(x.members[i].state.value, y.members[i].state.value);
}

TEST(Mspde, ZeroStepsIsLookahead) {
    const auto spec = FlowSpec::gaussian(vec({1.0, 2.0}), 0.4);
    const LatentState s{vec({0.3, -0.5}), 0.6, {}, {}};
    BudgetLedger a, b;
    EXPECT_EQ(mspde(s, spec, 0, 0.02, a), lookahead(s, spec, b, Phase::rollout));
    EXPECT_EQ(a.velocity(Phase::rollout), 1u);
    BudgetLedger c;
    (void)mspde(s, spec, 3, 0.02, c);
    EXPECT_EQ(c.velocity(Phase::rollout), 4u);
    EXPECT_THROW(mspde(s, spec, 40, 0.02, c), Error);
}

TEST(Mspde, ReachingZeroEqualsFullSolve) {
    const FlowSpec mix({{0.4, vec({-1.0, 0.5}), 0.5}, {0.6, vec({1.5, -0.3}), 0.9}});
    const auto schedule = StepSchedule::uniform(50);
    RngStream rng(12);
    BudgetLedger ledger;
    LatentState z{rng.normal_vector(2), 1.0, {}, {}};
    const LatentState mid = ode_solve(z, mix, schedule, 0, 30, ledger, Phase::advance);
    const Vector full = ode_solve(mid, mix, schedule, 30, 50, ledger, Phase::final_solve).value;
    BudgetLedger m;
    const Vector est = mspde(mid, mix, 20, 1.0 / 50, m);
    EXPECT_LT((est - full).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(m.velocity_total(), 20u);
}

// Error of the rollout estimate against the trajectory's own terminal value shrinks as S grows.
TEST(Mspde, ErrorNonincreasingInRolloutLength) {
    const FlowSpec spec({{0.5, vec({1.5}), 0.4}, {0.5, vec({-1.0}), 0.3}});
    const auto schedule = StepSchedule::uniform(16);
    const std::vector<int> steps{0, 1, 2, 4, 8};
    std::vector<double> err(steps.size(), 0.0);
    for (int seed = 0; seed < 1000; ++seed) {
        RngStream rng(static_cast<std::uint64_t>(seed));
        BudgetLedger ledger;
        const LatentState mid = ode_solve(LatentState{rng.normal_vector(1), 1.0, {}, {}}, spec, schedule, 0, 8,
                                          ledger, Phase::advance);
        const double terminal = ode_solve(mid, spec, schedule, 8, 16, ledger, Phase::final_solve).value[0];
        for (std::size_t i = 0; i < steps.size(); ++i)
            err[i] += std::abs(mspde(mid, spec, steps[i], 1.0 / 16, ledger)[0] - terminal) / 1000.0;
    }
    for (std::size_t i = 1; i < err.size(); ++i) EXPECT_LE(err[i], err[i - 1]) << "S=" << steps[i];
    EXPECT_LT(err.back(), 1e-12);
}

TEST(SelectTopM, ArgmaxTiesAndBruteForce) {
    CandidateSet set;
    for (std::uint64_t i = 0; i < 5; ++i) set.members.push_back(with_reward(i, -static_cast<double>((i * 3) % 5)));
    const auto best = select_top_m(set, 1);
    EXPECT_EQ(best.members[0].id, 0u);

    CandidateSet flat;
    for (std::uint64_t i : {4u, 2u, 9u, 1u}) flat.members.push_back(with_reward(i, -2.0));
    const auto tied = select_top_m(flat, 2);
    EXPECT_EQ(tied.members[0].id, 1u);
    EXPECT_EQ(tied.members[1].id, 2u);

    std::mt19937_64 gen(5);
    for (int rep = 0; rep < 200; ++rep) {
        CandidateSet s;
        std::vector<std::pair<double, std::uint64_t>> oracle;
        for (std::uint64_t i = 0; i < 9; ++i) {
            const double e = -1.0 - static_cast<double>(gen() % 12) / 4.0;
            const std::uint64_t id = 100 - i * 7;
            s.members.push_back(with_reward(id, e));
            oracle.emplace_back(-e, id);
        }
        std::sort(oracle.begin(), oracle.end());
        const auto top = select_top_m(s, 3);
        for (std::size_t k = 0; k < 3; ++k) {
            EXPECT_EQ(top.members[k].id, oracle[k].second);
            EXPECT_TRUE(top.members[k].survived);
        }
    }
    CandidateSet missing = set;
    missing.members[2].report.reset();
    EXPECT_THROW(select_top_m(missing, 2), Error);
    EXPECT_THROW(select_top_m(set, 6), Error);
}

TEST(TtsRun, NoRoundsIsPlainSolve) {
    const auto inst = make_suite(1, 1).front();
    TtsConfig cfg;
    cfg.K = 0;
    const auto r = tts_run(inst, inst.posterior, cfg, 42);
    BudgetLedger ledger;
    EXPECT_EQ(r.x0, plain_ode_sample(inst.posterior, cfg.T, 42, ledger));
    EXPECT_EQ(r.ledger, ledger);
    EXPECT_TRUE(r.trace.rounds.empty());
}

TEST(TtsRun, DegeneratePerturbationIsPlainSolve) {
    const auto inst = make_suite(1, 1).front();
    TtsConfig cfg;
    cfg.K = 1;
    cfg.N = 2;
    cfg.M = 1;
    cfg.sigma = SigmaSchedule::constant(0.0);
    cfg.keep_parents = false;
    const auto r = tts_run(inst, inst.posterior, cfg, 3);
    const auto& round = r.trace.rounds.at(0);
    EXPECT_EQ(round.members[0].state.value, round.members[1].state.value);
    BudgetLedger ledger;
    EXPECT_EQ(r.x0, plain_ode_sample(inst.posterior, cfg.T, 3, ledger));
}

TEST(TtsRun, ZeroSigmaWithKeptParentsKeepsParents) {
    const auto inst = make_suite(2, 1).front();
    TtsConfig cfg;
    cfg.K = 3;
    cfg.N = 5;
    cfg.M = 2;
    cfg.sigma = SigmaSchedule::constant(0.0);
    const auto r = tts_run(inst, inst.posterior, cfg, 8);
    // every candidate ties, so the lowest ids survive: the kept parents from round 2 on
    for (const auto& round : r.trace.rounds)
        for (std::size_t i = 0; i < round.members.size(); ++i) {
            EXPECT_EQ(round.members[i].survived, i < 2) << "round " << round.generation;
            if (round.generation > 1 && i < 2) {
                EXPECT_EQ(*round.members[i].state.parent, r.trace.rounds[round.generation - 2].members[i].id);
            }
        }
}

TEST(TtsRun, DeterministicAndTraceComplete) {
    const auto inst = make_suite(9, 1).front();
    TtsConfig cfg;
    cfg.K = 4;
    cfg.N = 7;
    const auto a = tts_run(inst, inst.posterior, cfg, 77);
    const auto b = tts_run(inst, inst.posterior, cfg, 77);
    EXPECT_EQ(a.x0, b.x0);
    EXPECT_EQ(a.ledger, b.ledger);

    std::set<std::uint64_t> seen;
    std::size_t count = 0;
    for (const auto& round : a.trace.rounds) {
        EXPECT_EQ(round.members.size(), 7u);
        int survivors = 0;
        for (const auto& c : round.members) {
            ASSERT_TRUE(c.report.has_value());
            EXPECT_EQ(c.report->candidate_id, c.id);
            EXPECT_EQ(c.state.time, round.time);
            seen.insert(c.id);
            survivors += c.survived;
            ++count;
        }
        EXPECT_EQ(survivors, cfg.M);
    }
    EXPECT_EQ(seen.size(), count);
    // ids 1..count are every candidate created after the initial noise
    EXPECT_EQ(*seen.begin(), 1u);
    EXPECT_EQ(*seen.rbegin(), count);
    // the final parent is the best survivor of the last round
    const auto& last = a.trace.rounds.back();
    const auto best = std::max_element(last.members.begin(), last.members.end(), [](const auto& x, const auto& y) {
        return x.report->ensemble < y.report->ensemble ||
               (x.report->ensemble == y.report->ensemble && x.id > y.id);
    });
    EXPECT_EQ(a.final_parent, best->id);
}

TEST(TtsRun, ErrorsCarryRoundContext) {
    const auto inst = make_suite(9, 1).front();
    TtsConfig cfg;
    cfg.K = 1;
    cfg.N = 3;
    cfg.M = 1;
    cfg.S = 20;
    cfg.T = 20;
    cfg.intervention_times = {0.5};
    try {
        (void)tts_run(inst, inst.posterior, cfg, 1);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("tts round 1"), std::string::npos);
    }
}

TEST(NfeFormula, Examples) {
    TtsConfig plain;
    plain.K = 0;
    plain.M = 1;
    EXPECT_EQ(nfe_formula(plain).velocity_total(), 50u);

    TtsConfig one;
    one.K = 1;
    one.N = 2;
    one.S = 3;
    one.M = 1;
    one.T = 10;
    EXPECT_EQ(nfe_formula(one).velocity_total(), 18u);
    const auto inst = make_suite(1, 1).front();
    EXPECT_EQ(tts_run(inst, inst.posterior, one, 0).ledger, nfe_formula(one));
}

TEST(NfeFormula, MatchesLedgerOnGrid) {
    const auto inst = make_suite(21, 1).front();
    for (int K : {1, 3, 5})
        for (int N : {3, 5, 8})
            for (int S : {0, 2, 5}) {
                TtsConfig cfg;
                cfg.K = K;
                cfg.N = N;
                cfg.S = S;
                const auto r = tts_run(inst, inst.posterior, cfg, 5);
                EXPECT_EQ(r.ledger, nfe_formula(cfg)) << K << "," << N << "," << S;
                EXPECT_EQ(r.ledger.velocity_total(), oracle_nfe(cfg));
                EXPECT_EQ(r.ledger.score_total(), 0u);
            }
    // a rollout that lands exactly on t = 0 skips the lookahead charge
    TtsConfig edge;
    edge.K = 1;
    edge.N = 3;
    edge.M = 1;
    edge.S = 5;
    edge.T = 10;
    edge.intervention_times = {0.5};
    EXPECT_EQ(tts_run(inst, inst.posterior, edge, 1).ledger, nfe_formula(edge));
    EXPECT_EQ(nfe_formula(edge).velocity(Phase::rollout), 15u);
}

TEST(BestOfN, SingleSampleAndMonotone) {
    const auto suite = make_suite(4, 1);
    const auto& inst = suite.front();
    const auto one = best_of_n(inst, inst.posterior, 1, {}, 50, 6);
    BudgetLedger ledger;
    EXPECT_EQ(one.x0, plain_ode_sample(inst.posterior, 50, 6, ledger));
    EXPECT_EQ(one.ledger.velocity_total(), 50u);
    EXPECT_EQ(best_of_n(inst, inst.posterior, 3, {}, 50, 6).x0, best_of_n(inst, inst.posterior, 3, {}, 50, 6).x0);
    EXPECT_EQ(best_of_n(inst, inst.posterior, 3, {}, 50, 6).ledger.velocity_total(), 150u);

    // with a single verifier the pick is an argmax, so the reward of the pick grows with n
    const std::array<Verifier, 1> fid{Verifier::fidelity};
    const auto v = VerifierConfig::subset(fid);
    std::vector<double> mean(3, 0.0);
    const auto many = make_suite(10, 500);
    for (const auto& in : many)
        for (std::size_t i = 0; i < 3; ++i) {
            const int n = 1 << i;
            mean[i] += v_fidelity(best_of_n(in, in.posterior, n, v, 20, in.id).x0, in) / 500.0;
        }
    EXPECT_LE(mean[0], mean[1]);
    EXPECT_LE(mean[1], mean[2]);
}

TEST(ParticleSampling, DegenerateCases) {
    const auto inst = make_suite(4, 1).front();
    ParticleConfig single;
    single.n = 1;
    single.resample_times = {0.6};
    const auto r = particle_sampling(inst, inst.posterior, single, 3);
    EXPECT_EQ(r.chosen, 0u);
    EXPECT_EQ(r.ledger.score_total(), 50u);

    ParticleConfig still;
    still.n = 4;
    still.survivors = 1;
    still.sigma = SigmaSchedule::constant(0.0);
    still.resample_times = {0.8, 0.4};
    const auto s = particle_sampling(inst, inst.posterior, still, 3);
    for (const auto& rep : s.reports) EXPECT_EQ(rep.raw, s.reports[0].raw);
    EXPECT_EQ(s.ledger.velocity_total(), 4u * 50u + 4u * 2u);
    EXPECT_EQ(particle_sampling(inst, inst.posterior, still, 3).x0, s.x0);
}
