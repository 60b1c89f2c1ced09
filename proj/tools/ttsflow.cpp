// ttsflow command-line front end.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ttsflow/ttsflow.hpp"

namespace fs = std::filesystem;
using namespace ttsflow;
using io::json;

namespace {

std::string out_path(const std::string& dir, const std::string& name) {
    fs::create_directories(dir);
    return (fs::path(dir) / name).string();
}

void write_json(const std::string& path, const json& j) { io::write_file(path, j.dump(2) + "\n"); }

// ---- suite

struct SuiteArgs {
    std::uint64_t seed = 0;
    int count = 10;
    std::string config;
    std::string out = ".";
};

int cmd_suite(const SuiteArgs& a) {
    SuiteConfig cfg;
    if (!a.config.empty()) cfg = io::suite_config_from_json(io::load_json(a.config));
    const auto suite = io::generate_suite(a.seed, a.count, cfg);
    write_json(out_path(a.out, "suite.json"), io::to_json(suite));
    io::write_file(out_path(a.out, "suite.csv"), io::suite_csv(suite));
    std::cout << "suite: " << a.count << " instances, dim " << cfg.dim << "\n";
    return 0;
}

// ---- sample

struct SampleArgs {
    std::string spec;
    int steps = 50;
    std::string schedule;
    int seeds = 1;
    std::uint64_t seed = 0;
    std::string mode = "ode";
    double sigma = 0.0;
    std::string out = ".";
};

int cmd_sample(const SampleArgs& a) {
    const FlowSpec spec = io::flow_spec_from_json(io::load_json(a.spec));
    const StepSchedule schedule =
        a.schedule.empty() ? StepSchedule::uniform(a.steps) : io::schedule_from_json(io::load_json(a.schedule));
    require(a.seeds >= 1, "sample: --seeds must be at least 1");
    std::string csv = "seed";
    for (Eigen::Index i = 0; i < spec.dim(); ++i) csv += ",x" + std::to_string(i);
    csv += ",nfe\n";
    for (int i = 0; i < a.seeds; ++i) {
        const std::uint64_t s = a.seed + static_cast<std::uint64_t>(i);
        BudgetLedger ledger;
        LatentState z{initial_noise(s, 0, spec.dim()), 1.0, {0}, std::nullopt};
        if (a.mode == "ode") {
            z = ode_solve(z, spec, schedule, 0, schedule.steps(), ledger, Phase::final_solve);
        } else {
            RngStream rng(SeedKey(s, Substream::sde).child(0));
            z = sde_solve(z, spec, schedule, 0, schedule.steps(), SigmaSchedule::constant(a.sigma), rng,
                          ledger, Phase::final_solve);
        }
        csv += std::to_string(s);
        for (Eigen::Index k = 0; k < spec.dim(); ++k) csv += ',' + io::fmt(z.value[k]);
        csv += ',' + std::to_string(ledger.velocity_total()) + '\n';
    }
    io::write_file(out_path(a.out, "samples.csv"), csv);
    std::cout << "sample: " << a.seeds << " rows (" << a.mode << ")\n";
    return 0;
}

// ---- tts

struct TtsArgs {
    std::string suite;
    std::string config;
    std::uint64_t seed = 0;
    bool blind = false;
    int workers = 1;
    std::string out = ".";
};

int cmd_tts(const TtsArgs& a) {
    const auto suite = io::suite_from_json(io::load_json(a.suite));
    TtsConfig cfg;
    if (!a.config.empty()) cfg = io::tts_config_from_json(io::load_json(a.config));
    if (a.blind) cfg.verifiers.blind = true;
    cfg.validate();

    const std::size_t n = suite.instances.size();
    std::vector<TtsResult> results(n);
    parallel_for(n, a.workers, [&](std::size_t i) {
        const auto& inst = suite.instances[i];
        results[i] = tts_run(inst, inst.posterior, cfg, a.seed + inst.id);
    });

    std::string trace = io::kTraceHeader;
    json instances = json::array();
    RawScores mean{};
    for (std::size_t i = 0; i < n; ++i) {
        const auto& inst = suite.instances[i];
        const auto& r = results[i];
        io::append_trace_csv(trace, inst.id, r.trace);
        const RawScores raw = score_candidate(r.x0, inst, cfg.verifiers);
        for (std::size_t v = 0; v < kVerifierCount; ++v) mean[v] += raw[v] / static_cast<double>(n);
        json nfe;
        for (Phase p : kPhases) nfe[std::string(phase_name(p))] = r.ledger.velocity(p);
        nfe["total"] = r.ledger.velocity_total();
        nfe["score_evals"] = r.ledger.score_total();
        json entry{{"id", inst.id},
                   {"run_seed", a.seed + inst.id},
                   {"x0", io::to_json(r.x0)},
                   {"scores", {{"fid", raw[0]}, {"like", raw[1]}, {"smooth", raw[2]}}},
                   {"nfe", nfe},
                   {"final_parent", r.final_parent}};
        if (!r.trace.rounds.empty())
            for (const auto& c : r.trace.rounds.back().members)
                if (c.id == r.final_parent) entry["final_reward"] = c.report->ensemble;
        instances.push_back(std::move(entry));
    }
    json summary{{"config", io::to_json(cfg)},
                 {"seed", a.seed},
                 {"predicted_nfe", nfe_formula(cfg).velocity_total()},
                 {"mean_scores", {{"fid", mean[0]}, {"like", mean[1]}, {"smooth", mean[2]}}},
                 {"instances", instances}};
    write_json(out_path(a.out, "summary.json"), summary);
    io::write_file(out_path(a.out, "trace.csv"), trace);
    std::cout << "tts: " << n << " instances, K=" << cfg.K << " N=" << cfg.N
              << ", mean fid " << mean[0] << "\n";
    return 0;
}

// ---- sweep

struct SweepArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> size;
    std::optional<int> workers;
    bool blind = false;
    std::string out = ".";
};

int cmd_sweep(const SweepArgs& a) {
    SweepConfig cfg;
    cfg.workers = default_workers();
    if (!a.config.empty()) cfg = io::sweep_config_from_json(io::load_json(a.config), cfg);
    if (a.seed) cfg.seed = *a.seed;
    if (a.size) cfg.suite_size = *a.size;
    if (a.workers) cfg.workers = *a.workers;
    if (a.blind) cfg.blind = true;
    const auto result = run_sweep(cfg);
    io::write_file(out_path(a.out, "pareto.csv"), io::sweep_rows_csv(result.pareto));
    io::write_file(out_path(a.out, "ablation.csv"), io::sweep_rows_csv(result.ablation));
    write_json(out_path(a.out, "sweep_summary.json"), io::to_json(result, cfg));
    for (const auto& row : result.pareto)
        std::cout << row.label << ": reward " << row.mean_reward << " nfe " << row.nfe << "\n";
    for (const auto& c : result.checks)
        std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << " (" << c.detail << ")\n";
    return result.all_pass() ? 0 : 1;
}

// ---- btfit

struct BtArgs {
    std::string in;
    std::string selections;
    bool smoothing = false;
    std::string out = ".";
};

int cmd_btfit(const BtArgs& a) {
    const auto data = io::comparisons_from_csv(io::read_file(a.in), a.in);
    BtOptions opts;
    opts.smoothing = a.smoothing;
    const auto fit = bt_fit(data, opts);
    io::write_file(out_path(a.out, "scores.csv"), io::scores_csv(data, fit));
    json info{{"methods", data.methods},
              {"iterations", fit.iterations},
              {"converged", fit.converged},
              {"log_likelihood", fit.log_likelihood.back()}};
    if (!a.selections.empty()) {
        const auto table = io::selections_from_csv(io::read_file(a.selections), a.selections);
        io::write_file(out_path(a.out, "topk.csv"), io::topk_csv(table));
        info["groups"] = table.scores.size();
    }
    write_json(out_path(a.out, "btfit.json"), info);
    for (std::size_t i = 0; i < data.size(); ++i) std::cout << data.methods[i] << " " << fit.pi[i] << "\n";
    return fit.converged ? 0 : 1;
}

// ---- umf-demo

struct UmfArgs {
    std::vector<int> lengths{2, 3, 4};
    int d_model = 8;
    int heads = 1;
    std::uint64_t seed = 0;
    bool zero_weights = false;
    std::string out;
};

int cmd_umf_demo(const UmfArgs& a) {
    using namespace ttsflow::umf;
    require(a.lengths.size() == 3, "umf-demo: --lengths takes latent,image,text");
    require(a.d_model >= 2, "umf-demo: --d-model must be at least 2");
    RngStream rng(SeedKey(a.seed, Substream::weights).child(2));
    auto tokens = [&](int rows) {
        Matrix m(rows, a.d_model);
        for (int r = 0; r < rows; ++r) m.row(r) = rng.normal_vector(a.d_model).transpose();
        return m;
    };
    const SequenceBatch seq = build_sequence(tokens(a.lengths[0]), tokens(a.lengths[1]), tokens(a.lengths[2]));
    const auto enc = PositionEncoding::random(a.d_model, a.seed);
    BlockWeights w = BlockWeights::random(a.d_model, 4 * a.d_model, a.heads, a.seed);
    if (a.zero_weights) w.zero_outputs();
    const SequenceBatch s0 = encode_positions(seq, enc);
    const SequenceBatch out = block_forward(s0, w);

    json checks = json::array();
    bool ok = true;
    auto check = [&](const std::string& name, bool pass, double value) {
        checks.push_back({{"name", name}, {"pass", pass}, {"value", value}});
        ok = ok && pass;
    };

    BlockWeights zeroed = w;
    zeroed.zero_outputs();
    const double residual = (block_forward(s0, zeroed).tokens - s0.tokens).cwiseAbs().maxCoeff();
    check("residual_identity", residual == 0.0, residual);

    std::vector<std::size_t> perm(static_cast<std::size_t>(seq.size()));
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    SequenceBatch p = s0;
    for (std::size_t i = 0; i < perm.size(); ++i) {
        p.tokens.row(static_cast<Eigen::Index>(i)) = s0.tokens.row(static_cast<Eigen::Index>(perm[i]));
        p.positions[i] = s0.positions[perm[i]];
        p.modalities[i] = s0.modalities[perm[i]];
    }
    const SequenceBatch pout = block_forward(p, w);
    double perm_err = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i)
        perm_err = std::max(perm_err, (pout.tokens.row(static_cast<Eigen::Index>(i)) -
                                       out.tokens.row(static_cast<Eigen::Index>(perm[i])))
                                          .cwiseAbs()
                                          .maxCoeff());
    check("permutation_equivariance", perm_err <= 1e-9, perm_err);

    double row_err = 0.0;
    for (const auto& k : attention_weights(layer_norm(s0.tokens, w.ln1_gamma, w.ln1_beta), w))
        row_err = std::max(row_err, (k.rowwise().sum().array() - 1.0).abs().maxCoeff());
    check("attention_rows_sum_to_one", row_err <= 1e-12, row_err);

    if (!a.zero_weights && a.lengths[0] > 0 && a.lengths[2] > 0) {
        SequenceBatch bumped = s0;
        bumped.tokens.row(seq.size() - 1) += rng.normal_vector(a.d_model).transpose();
        const double moved = (block_forward(bumped, w).tokens.topRows(a.lengths[0]) -
                              out.tokens.topRows(a.lengths[0]))
                                 .cwiseAbs()
                                 .maxCoeff();
        check("cross_modal_reachability", moved > 1e-9, moved);
    }

    json report{{"lengths", a.lengths},
                {"d_model", a.d_model},
                {"heads", a.heads},
                {"input_shape", {seq.size(), seq.width()}},
                {"output_shape", {out.size(), out.width()}},
                {"checks", checks},
                {"pass", ok}};
    std::cout << "input " << seq.size() << "x" << seq.width() << ", output " << out.size() << "x"
              << out.width() << "\n";
    for (const auto& c : checks)
        std::cout << (c["pass"].get<bool>() ? "PASS " : "FAIL ") << c["name"].get<std::string>() << "\n";
    if (!a.out.empty()) write_json(out_path(a.out, "umf_report.json"), report);
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ttsflow: flow-matching test-time search toolkit"};
    app.require_subcommand(1);

    SuiteArgs suite_args;
    auto* suite = app.add_subcommand("suite", "generate a restoration suite");
    suite->add_option("--seed", suite_args.seed);
    suite->add_option("--count", suite_args.count);
    suite->add_option("--config", suite_args.config, "suite config JSON");
    suite->add_option("--out", suite_args.out);

    SampleArgs sample_args;
    auto* sample = app.add_subcommand("sample", "terminal samples of a flow");
    sample->add_option("--spec", sample_args.spec, "flow spec JSON")->required();
    sample->add_option("--steps", sample_args.steps);
    sample->add_option("--schedule", sample_args.schedule, "schedule JSON");
    sample->add_option("--seeds", sample_args.seeds);
    sample->add_option("--seed", sample_args.seed);
    sample->add_option("--mode", sample_args.mode)->check(CLI::IsMember({"ode", "sde"}));
    sample->add_option("--sigma", sample_args.sigma);
    sample->add_option("--out", sample_args.out);

    TtsArgs tts_args;
    tts_args.workers = default_workers();
    auto* tts = app.add_subcommand("tts", "run the search on every suite instance");
    tts->add_option("--suite", tts_args.suite, "suite JSON")->required();
    tts->add_option("--config", tts_args.config, "search config JSON");
    tts->add_option("--seed", tts_args.seed);
    tts->add_flag("--blind", tts_args.blind);
    tts->add_option("--workers", tts_args.workers);
    tts->add_option("--out", tts_args.out);

    SweepArgs sweep_args;
    auto* sweep = app.add_subcommand("sweep", "budget ladder, baselines and verifier ablation");
    sweep->add_option("--config", sweep_args.config, "sweep config JSON");
    sweep->add_option("--seed", sweep_args.seed);
    sweep->add_option("--size", sweep_args.size, "suite size");
    sweep->add_option("--workers", sweep_args.workers);
    sweep->add_flag("--blind", sweep_args.blind);
    sweep->add_option("--out", sweep_args.out);

    BtArgs bt_args;
    auto* bt = app.add_subcommand("btfit", "Bradley-Terry scores from pairwise comparisons");
    bt->add_option("--in", bt_args.in, "comparisons CSV")->required();
    bt->add_option("--selections", bt_args.selections, "group,method,score CSV for top-k ratios");
    bt->add_flag("--smoothing", bt_args.smoothing);
    bt->add_option("--out", bt_args.out);

    UmfArgs umf_args;
    auto* umf = app.add_subcommand("umf-demo", "shape and invariant report of the fusion block");
    umf->add_option("--lengths", umf_args.lengths)->delimiter(',')->expected(3);
    umf->add_option("--d-model", umf_args.d_model);
    umf->add_option("--heads", umf_args.heads);
    umf->add_option("--seed", umf_args.seed);
    umf->add_flag("--zero-weights", umf_args.zero_weights);
    umf->add_option("--out", umf_args.out);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*suite) return cmd_suite(suite_args);
        if (*sample) return cmd_sample(sample_args);
        if (*tts) return cmd_tts(tts_args);
        if (*sweep) return cmd_sweep(sweep_args);
        if (*bt) return cmd_btfit(bt_args);
        if (*umf) return cmd_umf_demo(umf_args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
