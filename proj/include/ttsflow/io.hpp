#pragma once

// JSON and CSV formats shared by the CLI and the tests.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "flow.hpp"
#include "harness.hpp"
#include "search.hpp"
#include "stats.hpp"
#include "task.hpp"
#include "verifiers.hpp"

namespace ttsflow::io {

using json = nlohmann::json;

/// Shortest text that reads back to the same double.
inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out << text;
    if (!out) throw Error("write failed for '" + path + "'");
}

inline json parse_json(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(what + ": invalid JSON: " + e.what());
    }
}

inline json load_json(const std::string& path) { return parse_json(read_file(path), path); }

// ---- vectors and matrices

inline json to_json(const Vector& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

inline Vector vector_from_json(const json& j, const std::string& what) {
    if (!j.is_array()) throw Error(what + ": expected an array of numbers");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw Error(what + ": entry " + std::to_string(i) + " is not a number");
        v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    }
    return v;
}

inline json to_json(const Matrix& m) {
    json out = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(to_json(Vector(m.row(r).transpose())));
    return out;
}

inline Matrix matrix_from_json(const json& j, const std::string& what) {
    if (!j.is_array() || j.empty()) throw Error(what + ": expected a nonempty array of rows");
    std::vector<Vector> rows;
    for (const auto& r : j) rows.push_back(vector_from_json(r, what));
    Matrix m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != m.cols()) throw Error(what + ": ragged matrix rows");
        m.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
    }
    return m;
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw Error(std::string("config key '") + key + "' has the wrong type");
    }
}

// ---- flow specs and schedules

inline json to_json(const FlowSpec& spec) {
    json comps = json::array();
    for (const auto& c : spec.components())
        comps.push_back({{"weight", c.weight}, {"mean", to_json(c.mean)}, {"scale", c.scale}});
    return {{"dim", spec.dim()}, {"components", comps}};
}

inline FlowSpec flow_spec_from_json(const json& j) {
    if (!j.is_object() || !j.contains("components")) throw Error("flow spec: missing 'components'");
    std::vector<MixtureComponent> comps;
    for (const auto& c : j.at("components")) {
        if (!c.contains("mean") || !c.contains("scale"))
            throw Error("flow spec: every component needs 'mean' and 'scale'");
        comps.push_back({get_or(c, "weight", 1.0), vector_from_json(c.at("mean"), "flow spec mean"),
                         c.at("scale").get<double>()});
    }
    FlowSpec spec(std::move(comps));
    if (j.contains("dim") && j.at("dim").get<Eigen::Index>() != spec.dim())
        throw Error("flow spec: 'dim' does not match the component means");
    return spec;
}

/// Either an explicit list of times or {"steps": T}.
inline StepSchedule schedule_from_json(const json& j) {
    if (j.is_array()) return StepSchedule(j.get<std::vector<double>>());
    if (j.is_object() && j.contains("steps")) return StepSchedule::uniform(j.at("steps").get<int>());
    throw Error("schedule: expected a list of times or {\"steps\": T}");
}

// ---- search configuration

inline json to_json(const SigmaSchedule& s) {
    if (s.kind == SigmaSchedule::Kind::constant) return {{"type", "constant"}, {"value", s.start}};
    return {{"type", "linear"}, {"start", s.start}, {"end", s.end}};
}

inline SigmaSchedule sigma_from_json(const json& j) {
    if (j.is_number()) return SigmaSchedule::constant(j.get<double>());
    const auto type = get_or<std::string>(j, "type", "constant");
    if (type == "constant") return SigmaSchedule::constant(j.at("value").get<double>());
    if (type == "linear") return SigmaSchedule::linear(j.at("start").get<double>(), j.at("end").get<double>());
    throw Error("sigma_schedule: unknown type '" + type + "'");
}

inline VerifierConfig verifiers_from_json(const json& j, VerifierConfig base = {}) {
    if (j.contains("verifiers")) {
        std::vector<Verifier> members;
        for (const auto& name : j.at("verifiers")) members.push_back(verifier_from_name(name.get<std::string>()));
        const bool blind = base.blind;
        base = VerifierConfig::subset(members, blind);
    }
    base.blind = get_or(j, "blind", base.blind);
    base.validate();
    return base;
}

inline json verifier_names(const VerifierConfig& v) {
    json out = json::array();
    for (std::size_t i = 0; i < kVerifierCount; ++i)
        if (v.active[i]) out.push_back(kVerifierNames[i]);
    return out;
}

/// Keys absent from j keep the values of `base`.
inline TtsConfig tts_config_from_json(const json& j, TtsConfig base = {}) {
    if (!j.is_object()) throw Error("tts config: expected a JSON object");
    static const std::vector<std::string> known{"K", "N", "M", "S", "T", "sigma_schedule",
                                                "intervention_times", "keep_parents",
                                                "mutate_fraction", "verifiers", "blind"};
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw Error("tts config: unknown key '" + key + "'");
    base.K = get_or(j, "K", base.K);
    base.N = get_or(j, "N", base.N);
    base.M = get_or(j, "M", base.M);
    base.S = get_or(j, "S", base.S);
    base.T = get_or(j, "T", base.T);
    if (j.contains("sigma_schedule")) base.sigma = sigma_from_json(j.at("sigma_schedule"));
    base.intervention_times = get_or(j, "intervention_times", base.intervention_times);
    base.keep_parents = get_or(j, "keep_parents", base.keep_parents);
    base.mutate_fraction = get_or(j, "mutate_fraction", base.mutate_fraction);
    base.verifiers = verifiers_from_json(j, base.verifiers);
    base.validate();
    return base;
}

inline json to_json(const TtsConfig& c) {
    return {{"K", c.K},
            {"N", c.N},
            {"M", c.M},
            {"S", c.S},
            {"T", c.T},
            {"sigma_schedule", to_json(c.sigma)},
            {"intervention_times", c.times()},
            {"keep_parents", c.keep_parents},
            {"mutate_fraction", c.mutate_fraction},
            {"verifiers", verifier_names(c.verifiers)},
            {"blind", c.verifiers.blind}};
}

// ---- suites

struct Suite {
    std::uint64_t seed = 0;
    SuiteConfig config;
    FlowSpec prior;
    std::vector<RestorationInstance> instances;
};

inline Suite generate_suite(std::uint64_t seed, int count, const SuiteConfig& cfg) {
    return {seed, cfg, make_suite_prior(seed, cfg), make_suite(seed, count, cfg)};
}

inline json to_json(const SuiteConfig& c) {
    return {{"dim", c.dim},
            {"downsample", c.downsample},
            {"noise_std", c.noise_std},
            {"prior_components", c.prior_components},
            {"prior_scale", c.prior_scale},
            {"mean_scale", c.mean_scale}};
}

inline SuiteConfig suite_config_from_json(const json& j, SuiteConfig c = {}) {
    c.dim = get_or(j, "dim", c.dim);
    c.downsample = get_or(j, "downsample", c.downsample);
    c.noise_std = get_or(j, "noise_std", c.noise_std);
    c.prior_components = get_or(j, "prior_components", c.prior_components);
    c.prior_scale = get_or(j, "prior_scale", c.prior_scale);
    c.mean_scale = get_or(j, "mean_scale", c.mean_scale);
    require(c.dim >= 1 && c.downsample >= 1, "suite config: dim and downsample must be positive");
    return c;
}

inline json to_json(const GaussianMixture& g) {
    json comps = json::array();
    for (const auto& c : g.components())
        comps.push_back({{"weight", c.weight}, {"mean", to_json(c.mean)}, {"cov", to_json(c.cov)}});
    return {{"components", comps}};
}

inline json to_json(const Suite& s) {
    json instances = json::array();
    for (const auto& inst : s.instances)
        instances.push_back({{"id", inst.id},
                             {"truth", to_json(inst.truth)},
                             {"observation", to_json(inst.observation)},
                             {"posterior", to_json(inst.posterior)},
                             {"exact_posterior", to_json(inst.exact_posterior)}});
    return {{"seed", s.seed},
            {"config", to_json(s.config)},
            {"prior", to_json(s.prior)},
            {"operator", {{"matrix", to_json(s.instances.front().op.matrix)},
                          {"noise_std", s.instances.front().op.noise_std}}},
            {"instances", instances}};
}

/// Posteriors are recomputed from prior, operator and observation on load.
inline Suite suite_from_json(const json& j) {
    for (const char* key : {"prior", "operator", "instances"})
        if (!j.contains(key)) throw Error(std::string("suite: missing '") + key + "'");
    Suite s;
    s.seed = get_or<std::uint64_t>(j, "seed", 0);
    s.config = suite_config_from_json(j.value("config", json::object()));
    s.prior = flow_spec_from_json(j.at("prior"));
    DegradationOp op{matrix_from_json(j.at("operator").at("matrix"), "suite operator"),
                     j.at("operator").at("noise_std").get<double>()};
    op.validate();
    for (const auto& ji : j.at("instances")) {
        RestorationInstance inst;
        inst.id = ji.at("id").get<std::uint64_t>();
        inst.truth = vector_from_json(ji.at("truth"), "suite truth");
        inst.observation = vector_from_json(ji.at("observation"), "suite observation");
        inst.op = op;
        require(inst.truth.size() == s.prior.dim(), "suite: truth dimension mismatch");
        inst.exact_posterior = exact_posterior(s.prior, op, inst.observation);
        inst.posterior = isotropic_projection(inst.exact_posterior);
        s.instances.push_back(std::move(inst));
    }
    require(!s.instances.empty(), "suite: no instances");
    return s;
}

inline std::string suite_csv(const Suite& s) {
    std::string out = "instance";
    const auto d = s.instances.front().truth.size();
    const auto m = s.instances.front().observation.size();
    for (Eigen::Index i = 0; i < d; ++i) out += ",truth_" + std::to_string(i);
    for (Eigen::Index i = 0; i < m; ++i) out += ",obs_" + std::to_string(i);
    out += '\n';
    for (const auto& inst : s.instances) {
        out += std::to_string(inst.id);
        for (Eigen::Index i = 0; i < d; ++i) out += ',' + fmt(inst.truth[i]);
        for (Eigen::Index i = 0; i < m; ++i) out += ',' + fmt(inst.observation[i]);
        out += '\n';
    }
    return out;
}

// ---- traces

inline const char* kTraceHeader =
    "instance,round,candidate_id,parent_id,time,fid,like,smooth,rank_fid,rank_like,rank_smooth,"
    "ensemble,survived\n";

inline void append_trace_csv(std::string& out, std::uint64_t instance, const Trace& trace) {
    for (const auto& round : trace.rounds)
        for (const auto& c : round.members) {
            const auto& r = *c.report;
            out += std::to_string(instance) + ',' + std::to_string(round.generation) + ',' +
                   std::to_string(c.id) + ',' +
                   (c.state.parent ? std::to_string(*c.state.parent) : std::string()) + ',' +
                   fmt(round.time);
            for (double v : r.raw) out += ',' + fmt(v);
            for (double v : r.ranks) out += ',' + fmt(v);
            out += ',' + fmt(r.ensemble) + ',' + (c.survived ? "1" : "0") + '\n';
        }
}

// ---- CSV reading

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        cells.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

/// Rows of a CSV file after the header, with their 1-based line numbers. Blank lines skipped.
struct CsvRows {
    std::vector<std::string> header;
    std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
};

inline CsvRows read_csv(const std::string& text, const std::string& source) {
    CsvRows out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (out.header.empty()) {
            out.header = split_csv_line(line);
            continue;
        }
        auto cells = split_csv_line(line);
        if (cells.size() != out.header.size())
            throw Error(source + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(out.header.size()) + " fields, found " +
                        std::to_string(cells.size()));
        out.rows.emplace_back(lineno, std::move(cells));
    }
    if (out.header.empty()) throw Error(source + ": empty file");
    return out;
}

inline std::uint64_t parse_count(const std::string& cell, const std::string& where) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        if (cell.empty() || cell.front() == '-') throw std::invalid_argument("neg");
        v = std::stoull(cell, &used);
    } catch (const std::exception&) {
        throw Error(where + ": '" + cell + "' is not a nonnegative integer");
    }
    if (used != cell.size()) throw Error(where + ": '" + cell + "' is not a nonnegative integer");
    return v;
}

inline double parse_real(const std::string& cell, const std::string& where) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(cell, &used);
    } catch (const std::exception&) {
        throw Error(where + ": '" + cell + "' is not a number");
    }
    if (used != cell.size()) throw Error(where + ": '" + cell + "' is not a number");
    return v;
}

/// Aggregated rows (method_a, method_b, wins_a, wins_b) or per-trial rows (winner, loser).
inline ComparisonMatrix comparisons_from_csv(const std::string& text, const std::string& source) {
    const auto csv = read_csv(text, source);
    const std::size_t width = csv.header.size();
    if (width != 4 && width != 2)
        throw Error(source + ":1: header must have 4 columns (method_a,method_b,wins_a,wins_b) or "
                             "2 columns (winner,loser)");
    ComparisonMatrix m;
    for (const auto& [lineno, cells] : csv.rows) {
        const std::string where = source + ":" + std::to_string(lineno);
        if (cells[0].empty() || cells[1].empty()) throw Error(where + ": empty method label");
        if (cells[0] == cells[1]) throw Error(where + ": a method cannot be compared with itself");
        const auto a = m.intern(cells[0]);
        const auto b = m.intern(cells[1]);
        if (width == 4) {
            m.wins[a][b] += parse_count(cells[2], where);
            m.wins[b][a] += parse_count(cells[3], where);
        } else {
            m.wins[a][b] += 1;
        }
    }
    if (csv.rows.empty()) throw Error(source + ": no comparison rows");
    return m;
}

/// Long-form rows (group, method, score); every group must score every method once.
inline SelectionTable selections_from_csv(const std::string& text, const std::string& source) {
    const auto csv = read_csv(text, source);
    if (csv.header.size() != 3) throw Error(source + ":1: header must be group,method,score");
    SelectionTable t;
    std::vector<std::string> groups;
    std::vector<std::vector<std::pair<std::string, double>>> entries;
    for (const auto& [lineno, cells] : csv.rows) {
        const std::string where = source + ":" + std::to_string(lineno);
        const double score = parse_real(cells[2], where);
        auto g = std::find(groups.begin(), groups.end(), cells[0]);
        if (g == groups.end()) {
            groups.push_back(cells[0]);
            entries.emplace_back();
            g = groups.end() - 1;
        }
        entries[static_cast<std::size_t>(g - groups.begin())].emplace_back(cells[1], score);
        if (std::find(t.methods.begin(), t.methods.end(), cells[1]) == t.methods.end())
            t.methods.push_back(cells[1]);
    }
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        std::vector<double> row(t.methods.size(), std::numeric_limits<double>::quiet_NaN());
        for (const auto& [method, score] : entries[gi]) {
            const auto i = t.index_of(method);
            if (!std::isnan(row[i]))
                throw Error(source + ": group '" + groups[gi] + "' scores '" + method + "' twice");
            row[i] = score;
        }
        for (std::size_t i = 0; i < row.size(); ++i)
            if (std::isnan(row[i]))
                throw Error(source + ": group '" + groups[gi] + "' has no score for '" + t.methods[i] + "'");
        t.scores.push_back(std::move(row));
    }
    t.validate();
    return t;
}

/// (method, pi, rank) with rank 1 = largest pi; ties by input order.
inline std::string scores_csv(const ComparisonMatrix& m, const BtResult& fit) {
    const auto order = top_k(fit.pi, fit.pi.size());
    std::vector<std::size_t> rank(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r + 1;
    std::string out = "method,pi,rank\n";
    for (std::size_t i = 0; i < m.size(); ++i)
        out += m.methods[i] + ',' + fmt(fit.pi[i]) + ',' + std::to_string(rank[i]) + '\n';
    return out;
}

inline std::string topk_csv(const SelectionTable& t) {
    std::string out = "method,k,ratio\n";
    for (const auto& method : t.methods)
        for (std::size_t k = 1; k <= t.methods.size(); ++k)
            out += method + ',' + std::to_string(k) + ',' +
                   fmt(top_k_ratio(t, method, static_cast<int>(k))) + '\n';
    return out;
}

// ---- sweeps

/// Recognized keys: suite {seed, size, dim, ...}, seed, base (tts config keys), ladder
/// [[K, N], ...], reference, baselines ["best_of_n", "particle"], verifier_subsets
/// [["fid", ...], ...], ablation, repetitions, blind, workers.
inline SweepConfig sweep_config_from_json(const json& j, SweepConfig c = {}) {
    if (!j.is_object()) throw Error("sweep config: expected a JSON object");
    if (j.contains("suite")) {
        const auto& s = j.at("suite");
        c.suite_seed = get_or(s, "seed", c.suite_seed);
        c.suite_size = get_or(s, "size", c.suite_size);
        c.suite = suite_config_from_json(s, c.suite);
    }
    c.seed = get_or(j, "seed", c.seed);
    c.blind = get_or(j, "blind", c.blind);
    if (j.contains("base")) c.base = tts_config_from_json(j.at("base"), c.base);
    if (j.contains("ladder")) {
        c.ladder.clear();
        for (const auto& p : j.at("ladder")) {
            if (!p.is_array() || p.size() != 2) throw Error("sweep config: ladder entries are [K, N]");
            c.ladder.emplace_back(p[0].get<int>(), p[1].get<int>());
        }
    }
    c.reference = get_or(j, "reference", c.reference);
    if (j.contains("baselines")) {
        c.best_of_n = c.particle = false;
        for (const auto& b : j.at("baselines")) {
            const auto name = b.get<std::string>();
            if (name == "best_of_n") c.best_of_n = true;
            else if (name == "particle") c.particle = true;
            else throw Error("sweep config: unknown baseline '" + name + "'");
        }
    }
    if (j.contains("verifier_subsets")) {
        c.verifier_subsets.clear();
        for (const auto& names : j.at("verifier_subsets"))
            c.verifier_subsets.push_back(verifiers_from_json(json{{"verifiers", names}}));
    }
    c.ablation = get_or(j, "ablation", c.ablation);
    c.repetitions = get_or(j, "repetitions", c.repetitions);
    c.workers = get_or(j, "workers", c.workers);
    c.validate();
    for (std::size_t i = 0; i < c.ladder.size(); ++i) ladder_config(c, i, c.verifier_subsets.front()).validate();
    return c;
}

inline std::string sweep_rows_csv(const std::vector<SweepRow>& rows) {
    std::string out =
        "label,kind,K,N,M,S,verifiers,mean_reward,std_reward,nfe,score_evals,mean_fid,mean_like,"
        "mean_smooth\n";
    for (const auto& r : rows) {
        out += r.label + ',' + r.kind + ',' + std::to_string(r.K) + ',' + std::to_string(r.N) + ',' +
               std::to_string(r.M) + ',' + std::to_string(r.S) + ',' + r.verifiers + ',' +
               fmt(r.mean_reward) + ',' + fmt(r.std_reward) + ',' + fmt(r.nfe) + ',' +
               fmt(r.score_evals);
        for (double v : r.mean_raw) out += ',' + fmt(v);
        out += '\n';
    }
    return out;
}

inline json to_json(const SweepResult& r, const SweepConfig& c) {
    json checks = json::array();
    for (const auto& ch : r.checks) checks.push_back({{"name", ch.name}, {"pass", ch.pass}, {"detail", ch.detail}});
    json ladder = json::array();
    for (const auto& [K, N] : c.ladder) ladder.push_back({K, N});
    json rows = json::array();
    for (const auto& row : r.pareto)
        rows.push_back({{"label", row.label}, {"mean_reward", row.mean_reward}, {"nfe", row.nfe}});
    return {{"suite", {{"seed", c.suite_seed}, {"size", c.suite_size}}},
            {"seed", c.seed},
            {"blind", c.blind},
            {"repetitions", c.repetitions},
            {"ladder", ladder},
            {"reference", c.reference},
            {"base", to_json(c.base)},
            {"pareto", rows},
            {"checks", checks},
            {"pass", r.all_pass()}};
}

} // namespace ttsflow::io
