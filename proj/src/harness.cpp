#include "mfstop/harness.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mfstop/calculus.hpp"
#include "mfstop/rng.hpp"

namespace mfstop {

std::string format_double(double v) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(std::vector<std::string> header) : columns_(header.size()) {
    if (header.empty()) throw UsageError("csv needs at least one column");
    for (size_t i = 0; i < header.size(); ++i) {
        if (i) body_ += ',';
        body_ += header[i];
    }
    body_ += '\n';
}

void CsvWriter::row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_) throw UsageError("csv row has wrong cell count");
    for (size_t i = 0; i < cells.size(); ++i) {
        if (i) body_ += ',';
        body_ += cells[i];
    }
    body_ += '\n';
}

void CsvWriter::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw UsageError("cannot open " + path + " for writing");
    os.write(body_.data(), static_cast<std::streamsize>(body_.size()));
    if (!os) throw UsageError("failed writing " + path);
}

std::uint64_t config_hash(const nlohmann::json& config) {
    const std::string dump = config.dump();
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

const nlohmann::json* find_path(const nlohmann::json& c, const std::string& path) {
    const nlohmann::json* cur = &c;
    size_t start = 0;
    while (start <= path.size()) {
        const size_t dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (!cur->is_object() || !cur->contains(key)) return nullptr;
        cur = &(*cur)[key];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    return cur;
}

namespace {
[[noreturn]] void bad_field(const std::string& path, const std::string& what) {
    throw ValidationError("config." + path + ": " + what);
}
} // namespace

double req_num(const nlohmann::json& c, const std::string& path) {
    const nlohmann::json* j = find_path(c, path);
    if (!j) bad_field(path, "required");
    if (!j->is_number()) bad_field(path, "expected number");
    return j->get<double>();
}
double opt_num(const nlohmann::json& c, const std::string& path, double fallback) {
    const nlohmann::json* j = find_path(c, path);
    if (!j) return fallback;
    if (!j->is_number()) bad_field(path, "expected number");
    return j->get<double>();
}
std::int64_t req_int(const nlohmann::json& c, const std::string& path) {
    const nlohmann::json* j = find_path(c, path);
    if (!j) bad_field(path, "required");
    if (!j->is_number_integer()) bad_field(path, "expected integer");
    return j->get<std::int64_t>();
}
std::int64_t opt_int(const nlohmann::json& c, const std::string& path, std::int64_t fallback) {
    const nlohmann::json* j = find_path(c, path);
    if (!j) return fallback;
    if (!j->is_number_integer()) bad_field(path, "expected integer");
    return j->get<std::int64_t>();
}
std::string req_str(const nlohmann::json& c, const std::string& path) {
    const nlohmann::json* j = find_path(c, path);
    if (!j) bad_field(path, "required");
    if (!j->is_string()) bad_field(path, "expected string");
    return j->get<std::string>();
}
std::string opt_str(const nlohmann::json& c, const std::string& path,
                    const std::string& fallback) {
    const nlohmann::json* j = find_path(c, path);
    if (!j) return fallback;
    if (!j->is_string()) bad_field(path, "expected string");
    return j->get<std::string>();
}

Model model_from_config(const nlohmann::json& config) {
    const std::string name = req_str(config, "model.name");
    nlohmann::json params = nlohmann::json::object();
    if (const nlohmann::json* p = find_path(config, "model.params")) {
        if (!p->is_object()) bad_field("model.params", "expected object");
        params = *p;
    }
    return make_builtin(name, params);
}

TimeGrid grid_from_config(const nlohmann::json& config) {
    TimeGrid g{opt_num(config, "grid.t0", 0.0), req_num(config, "grid.T"),
               static_cast<int>(req_int(config, "grid.n_steps"))};
    g.validate();
    return g;
}

EmpiricalMeasure measure_from_config(const nlohmann::json& config, const std::string& path,
                                     int expected_dim) {
    if (const nlohmann::json* f = find_path(config, path + ".file")) {
        if (!f->is_string()) bad_field(path + ".file", "expected string");
        EmpiricalMeasure m = load_measure(f->get<std::string>());
        if (expected_dim >= 0 && m.dim() != expected_dim)
            bad_field(path + ".file", "dimension mismatch with the model");
        return m;
    }
    const nlohmann::json* rows = find_path(config, path + ".atoms");
    if (!rows) bad_field(path, "required (either .atoms or .file)");
    if (!rows->is_array() || rows->empty()) bad_field(path + ".atoms", "expected nonempty array");
    int d = -1;
    EmpiricalMeasure m;
    for (size_t r = 0; r < rows->size(); ++r) {
        const nlohmann::json& row = (*rows)[r];
        if (!row.is_array() || row.size() < 3)
            bad_field(path + ".atoms", "row " + std::to_string(r) +
                                           ": expected [weight, x_1.., indicator]");
        for (const auto& cell : row)
            if (!cell.is_number())
                bad_field(path + ".atoms", "row " + std::to_string(r) + ": expected numbers");
        const int rd = static_cast<int>(row.size()) - 2;
        if (d < 0) {
            d = rd;
            if (expected_dim >= 0 && d != expected_dim)
                bad_field(path + ".atoms", "dimension mismatch with the model");
            m = EmpiricalMeasure(d);
            m.reserve(static_cast<int>(rows->size()));
        } else if (rd != d) {
            bad_field(path + ".atoms", "row " + std::to_string(r) + ": inconsistent length");
        }
        Eigen::VectorXd x(d);
        for (int j = 0; j < d; ++j) x(j) = row[j + 1].get<double>();
        const double ind = row[d + 1].get<double>();
        if (ind != 0.0 && ind != 1.0)
            bad_field(path + ".atoms", "row " + std::to_string(r) + ": indicator must be 0 or 1");
        m.add_atom(x, static_cast<int>(ind), row[0].get<double>());
    }
    m.validate();
    return m;
}

SurvivalLaw law_from_config(const nlohmann::json& config, const std::string& path, int n_steps) {
    const nlohmann::json* j = find_path(config, path);
    if (!j) bad_field(path, "required");
    if (find_path(config, path + ".uniform")) return SurvivalLaw::uniform_nodes(n_steps);
    if (find_path(config, path + ".point"))
        return SurvivalLaw::point(static_cast<int>(req_int(config, path + ".point")), n_steps);
    const nlohmann::json* probs = find_path(config, path + ".node_prob");
    if (!probs) bad_field(path, "expected .uniform, .point or .node_prob");
    if (!probs->is_array()) bad_field(path + ".node_prob", "expected array");
    SurvivalLaw law;
    for (const auto& cell : *probs) {
        if (!cell.is_number()) bad_field(path + ".node_prob", "expected numbers");
        law.node_prob.push_back(cell.get<double>());
    }
    law.never_prob = opt_num(config, path + ".never_prob", 0.0);
    law.validate();
    if (static_cast<int>(law.node_prob.size()) != n_steps + 1)
        bad_field(path + ".node_prob", "size must be n_steps + 1");
    return law;
}

StoppingRule rule_from_config(const nlohmann::json& config, const std::string& path, int n_steps) {
    const std::string kind = opt_str(config, path + ".kind", "never");
    if (kind == "never") return StoppingRule::never();
    if (kind == "fixed") {
        const nlohmann::json* nodes = find_path(config, path + ".nodes");
        if (!nodes || !nodes->is_array()) bad_field(path + ".nodes", "expected array");
        std::vector<int> v;
        for (const auto& cell : *nodes) {
            if (!cell.is_number_integer()) bad_field(path + ".nodes", "expected integers");
            v.push_back(cell.get<int>());
        }
        return StoppingRule::fixed(std::move(v));
    }
    if (kind == "iid") return StoppingRule::iid(law_from_config(config, path + ".law", n_steps));
    bad_field(path + ".kind", "unknown rule kind '" + kind + "'");
}

LatticeSpec lattice_from_config(const nlohmann::json& config, const std::string& path) {
    LatticeSpec spec;
    spec.x_min = req_num(config, path + ".x_min");
    spec.x_max = req_num(config, path + ".x_max");
    spec.n_x = static_cast<int>(req_int(config, path + ".n_x"));
    spec.clamp_tolerance = opt_num(config, path + ".clamp_tolerance", spec.clamp_tolerance);
    spec.validate();
    return spec;
}

LatticeKernel kernel_from_config(const nlohmann::json& config, const std::string& path) {
    const std::string k = opt_str(config, path, "trinomial");
    if (k == "trinomial") return LatticeKernel::Trinomial;
    if (k == "two-point") return LatticeKernel::TwoPoint;
    bad_field(path, "expected 'trinomial' or 'two-point'");
}

LsmcOptions lsmc_from_config(const nlohmann::json& config, const std::string& path) {
    LsmcOptions o;
    o.n_paths = static_cast<int>(opt_int(config, path + ".n_paths", o.n_paths));
    o.improvement_rounds =
        static_cast<int>(opt_int(config, path + ".improvement_rounds", o.improvement_rounds));
    o.eval_paths = static_cast<int>(opt_int(config, path + ".eval_paths", o.eval_paths));
    o.exploration_fraction =
        opt_num(config, path + ".exploration_fraction", o.exploration_fraction);
    o.min_layer_samples =
        static_cast<int>(opt_int(config, path + ".min_layer_samples", o.min_layer_samples));
    return o;
}

nlohmann::json RunManifest::to_json() const {
    char hex[24];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(config_digest));
    nlohmann::json j;
    j["command"] = command;
    j["seed"] = seed;
    j["config_hash"] = std::string(hex);
    j["version"] = version;
    nlohmann::json t = nlohmann::json::object();
    for (const auto& [k, v] : timings_sec) t[k] = v;
    j["timings_sec"] = t;
    j["warnings"] = warnings;
    j["outputs"] = outputs;
    return j;
}

void RunManifest::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw UsageError("cannot open " + path + " for writing");
    os << to_json().dump(2) << '\n';
}

namespace {

class StageClock {
public:
    explicit StageClock(RunManifest& m) : m_(m), last_(std::chrono::steady_clock::now()) {}
    void lap(const std::string& name) {
        const auto now = std::chrono::steady_clock::now();
        m_.timings_sec.emplace_back(name, std::chrono::duration<double>(now - last_).count());
        last_ = now;
    }

private:
    RunManifest& m_;
    std::chrono::steady_clock::time_point last_;
};

RunManifest start_manifest(const std::string& command, const nlohmann::json& config,
                           std::uint64_t seed, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    RunManifest m;
    m.command = command;
    m.seed = seed;
    m.config_digest = config_hash(config);
    m.version = kVersion;
    return m;
}

EmpiricalMeasure initial_system(const nlohmann::json& config, const Model& model, int n_particles) {
    const EmpiricalMeasure m0 = measure_from_config(config, "initial", model.dim);
    if (n_particles <= 0 || n_particles == m0.size()) {
        if (!m0.uniform_weights())
            throw UsageError("initial measure must have uniform weights to act as a system; "
                             "set n_particles to resample");
        return m0;
    }
    return resample_uniform(m0, n_particles);
}

} // namespace

RunManifest run_simulate(const nlohmann::json& config, std::uint64_t seed,
                         const std::string& out_dir) {
    RunManifest man = start_manifest("simulate", config, seed, out_dir);
    StageClock clock(man);

    const Model model = model_from_config(config);
    const TimeGrid grid = grid_from_config(config);
    const int n_particles = static_cast<int>(opt_int(config, "simulate.n_particles", 0));
    const EmpiricalMeasure y0 = initial_system(config, model, n_particles);
    const StoppingRule rule = rule_from_config(config, "simulate.rule", grid.n_steps);
    const int reps = static_cast<int>(opt_int(config, "simulate.replications", 1));
    if (reps < 1) bad_field("simulate.replications", "must be positive");

    SimulateOptions base;
    const std::string noise = opt_str(config, "simulate.noise", "gaussian");
    if (noise == "two-point") {
        base.kernel = NoiseKernel::LatticeTwoPoint;
        base.lattice_h = req_num(config, "simulate.lattice_h");
    } else if (noise != "gaussian") {
        bad_field("simulate.noise", "expected 'gaussian' or 'two-point'");
    }
    clock.lap("setup");

    std::vector<std::string> header = {"replication", "particle", "node", "t"};
    for (int j = 0; j < model.dim; ++j) header.push_back("x_" + std::to_string(j));
    header.push_back("indicator");
    CsvWriter paths_csv(header);
    CsvWriter obj_csv({"replication", "objective"});

    for (int r = 0; r < reps; ++r) {
        SimulateOptions so = base;
        so.replication = static_cast<std::uint64_t>(r);
        const ParticlePaths paths = simulate_system(model, y0, grid, rule, seed, so);
        for (int k = 0; k < paths.n; ++k)
            for (int s = 0; s < grid.nodes(); ++s) {
                std::vector<std::string> cells = {std::to_string(r), std::to_string(k),
                                                  std::to_string(s), format_double(grid.time(s))};
                for (int j = 0; j < paths.dim; ++j) cells.push_back(format_double(paths.x(s, k, j)));
                cells.push_back(paths.is_alive(s, k) ? "1" : "0");
                paths_csv.row(cells);
            }
        obj_csv.row({std::to_string(r), format_double(objective_of_paths(model, paths))});
    }
    clock.lap("simulate");

    paths_csv.save(out_dir + "/paths.csv");
    obj_csv.save(out_dir + "/objectives.csv");
    man.outputs = {"paths.csv", "objectives.csv"};
    clock.lap("write");
    return man;
}

namespace {

// shared by run_solve and run_policy_eval; fills warnings and optionally the
// lsmc rollout estimate
ValueTable build_table(const nlohmann::json& config, const Model& model, const TimeGrid& grid,
                       std::uint64_t seed, RunManifest& man, double* lsmc_value,
                       double* lsmc_se) {
    const std::string backend = opt_str(config, "solve.backend", "lattice");
    ValueTable table;
    if (backend == "lattice") {
        const int N = static_cast<int>(req_int(config, "solve.n_particles"));
        const LatticeSpec spec = lattice_from_config(config, "solve.lattice");
        const LatticeKernel kernel = kernel_from_config(config, "solve.kernel");
        table = solve_cascade(model, N, grid, spec, kernel);
    } else if (backend == "lsmc") {
        const int N = static_cast<int>(req_int(config, "solve.n_particles"));
        const EmpiricalMeasure y0 = initial_system(config, model, N);
        const LsmcOptions opts = lsmc_from_config(config, "solve.lsmc");
        LsmcResult res = solve_lsmc(model, y0, grid, seed, opts);
        if (lsmc_value) *lsmc_value = res.value;
        if (lsmc_se) *lsmc_se = res.std_error;
        table = std::move(res.table);
    } else {
        bad_field("solve.backend", "expected 'lattice' or 'lsmc'");
    }
    for (const auto& w : table.warnings) man.warnings.push_back(w);
    return table;
}

} // namespace

RunManifest run_solve(const nlohmann::json& config, std::uint64_t seed,
                      const std::string& out_dir) {
    RunManifest man = start_manifest("solve", config, seed, out_dir);
    StageClock clock(man);

    const Model model = model_from_config(config);
    const TimeGrid grid = grid_from_config(config);
    double lsmc_value = std::numeric_limits<double>::quiet_NaN();
    double lsmc_se = std::numeric_limits<double>::quiet_NaN();
    const ValueTable table = build_table(config, model, grid, seed, man, &lsmc_value, &lsmc_se);
    clock.lap("solve");

    CsvWriter summary({"key", "value"});
    summary.row({"backend", table.backend == ValueTable::Backend::Lattice ? "lattice" : "lsmc"});
    summary.row({"n_particles", std::to_string(table.n_particles)});
    summary.row({"interp_error_estimate", format_double(table.interp_error_estimate)});
    summary.row({"eta_default", format_double(table.eta_default)});
    summary.row({"clip_events", std::to_string(table.clip_events)});
    summary.row({"boundary_events", std::to_string(table.boundary_events)});
    if (table.backend == ValueTable::Backend::Lsmc) {
        summary.row({"rollout_value", format_double(lsmc_value)});
        summary.row({"rollout_se", format_double(lsmc_se)});
    }
    if (find_path(config, "initial")) {
        const EmpiricalMeasure y0 = initial_system(config, model, table.n_particles);
        summary.row({"value_at_initial",
                     format_double(table.value_at(0, positions_of(y0), regime_of(y0)))});
    }

    save_table(out_dir + "/table.bin", table);
    summary.save(out_dir + "/summary.csv");
    man.outputs = {"table.bin", "summary.csv"};
    clock.lap("write");
    return man;
}

RunManifest run_policy_eval(const nlohmann::json& config, std::uint64_t seed,
                            const std::string& out_dir) {
    RunManifest man = start_manifest("policy-eval", config, seed, out_dir);
    StageClock clock(man);

    const Model model = model_from_config(config);
    const TimeGrid grid = grid_from_config(config);
    ValueTable table;
    if (const nlohmann::json* f = find_path(config, "policy.table_file")) {
        if (!f->is_string()) bad_field("policy.table_file", "expected string");
        table = load_table(f->get<std::string>());
        for (const auto& w : table.warnings) man.warnings.push_back(w);
    } else if (find_path(config, "solve")) {
        table = build_table(config, model, grid, seed, man, nullptr, nullptr);
    } else {
        bad_field("policy", "needs either .table_file or a solve block");
    }
    if (table.grid != grid) throw UsageError("policy table was solved on a different time grid");
    clock.lap("table");

    const EmpiricalMeasure y0 = initial_system(config, model, table.n_particles);
    const double eta = opt_num(config, "policy.eta", -1.0);
    const int reps = static_cast<int>(opt_int(config, "policy.replications", 1000));
    const auto policy = std::make_shared<StoppingPolicy>(&table, eta);

    const PolicyValue pv =
        evaluate_policy(model, y0, grid, StoppingRule::policy(policy), reps, seed);
    const double vat = table.value_at(0, positions_of(y0), regime_of(y0));
    clock.lap("evaluate");

    CsvWriter out({"J", "SE", "value_at", "epsilon"});
    out.row({format_double(pv.mean), format_double(pv.std_error), format_double(vat),
             format_double(vat - pv.mean)});
    out.save(out_dir + "/policy_eval.csv");

    const PolicyRunResult one = run_policy(*policy, model, y0, grid, seed);
    CsvWriter trace({"event", "node", "particle", "remaining"});
    for (size_t e = 0; e < one.trace.events.size(); ++e)
        trace.row({std::to_string(e), std::to_string(one.trace.events[e].node),
                   std::to_string(one.trace.events[e].index),
                   std::to_string(one.trace.events[e].remaining)});
    trace.save(out_dir + "/policy_trace.csv");

    man.outputs = {"policy_eval.csv", "policy_trace.csv"};
    clock.lap("write");
    return man;
}

RunManifest run_chaos(const nlohmann::json& config, std::uint64_t seed,
                      const std::string& out_dir) {
    RunManifest man = start_manifest("chaos", config, seed, out_dir);
    StageClock clock(man);

    const Model model = model_from_config(config);
    const TimeGrid grid = grid_from_config(config);
    const EmpiricalMeasure m0 = measure_from_config(config, "initial", model.dim);

    ChaosParams params;
    const nlohmann::json* ns = find_path(config, "chaos.Ns");
    if (!ns || !ns->is_array() || ns->empty()) bad_field("chaos.Ns", "expected nonempty array");
    params.Ns.clear();
    for (const auto& cell : *ns) {
        if (!cell.is_number_integer()) bad_field("chaos.Ns", "expected integers");
        params.Ns.push_back(cell.get<int>());
    }
    params.replications = static_cast<int>(opt_int(config, "chaos.replications", params.replications));
    params.cloud_multiple =
        static_cast<int>(opt_int(config, "chaos.cloud_multiple", params.cloud_multiple));
    params.picard_tol = opt_num(config, "chaos.picard_tol", params.picard_tol);
    params.picard_kmax = static_cast<int>(opt_int(config, "chaos.picard_kmax", params.picard_kmax));
    params.bias_subsample =
        static_cast<int>(opt_int(config, "chaos.bias_subsample", params.bias_subsample));
    params.w2_replications =
        static_cast<int>(opt_int(config, "chaos.w2_replications", params.w2_replications));
    const SurvivalLaw law = law_from_config(config, "chaos.law", grid.n_steps);
    clock.lap("setup");

    const ChaosReport rep = chaos_experiment(model, m0, grid, law, seed, params);
    clock.lap("experiment");

    CsvWriter out({"N", "w1sq_mean", "w1sq_se", "w2sq_mean", "w2sq_se", "replications",
                   "w2_replications", "slope"});
    for (const ChaosRow& r : rep.rows)
        out.row({std::to_string(r.N), format_double(r.w1sq_mean), format_double(r.w1sq_se),
                 format_double(r.w2sq_mean), format_double(r.w2sq_se),
                 std::to_string(r.replications), std::to_string(r.w2_replications),
                 format_double(rep.slope)});
    out.save(out_dir + "/chaos.csv");

    CsvWriter meta({"key", "value"});
    meta.row({"cloud_size", std::to_string(rep.cloud_size)});
    meta.row({"picard_gap", format_double(rep.picard_gap)});
    meta.row({"picard_iterations", std::to_string(rep.picard_iterations)});
    meta.row({"picard_converged", rep.picard_converged ? "1" : "0"});
    meta.row({"flow_bias_proxy", format_double(rep.flow_bias_proxy)});
    meta.save(out_dir + "/chaos_meta.csv");

    if (!rep.picard_converged)
        man.warnings.push_back("mean-field iteration stopped above tolerance, gap " +
                               format_double(rep.picard_gap));
    man.outputs = {"chaos.csv", "chaos_meta.csv"};
    clock.lap("write");
    return man;
}

RunManifest run_converge(const nlohmann::json& config, std::uint64_t seed,
                         const std::string& out_dir) {
    RunManifest man = start_manifest("converge", config, seed, out_dir);
    StageClock clock(man);

    const Model model = model_from_config(config);
    const TimeGrid grid = grid_from_config(config);
    const EmpiricalMeasure m0 = measure_from_config(config, "initial", model.dim);

    ConvergenceParams params;
    const nlohmann::json* ns = find_path(config, "converge.Ns");
    if (!ns || !ns->is_array() || ns->empty()) bad_field("converge.Ns", "expected nonempty array");
    params.Ns.clear();
    for (const auto& cell : *ns) {
        if (!cell.is_number_integer()) bad_field("converge.Ns", "expected integers");
        params.Ns.push_back(cell.get<int>());
    }
    params.rollout_reps =
        static_cast<int>(opt_int(config, "converge.rollout_reps", params.rollout_reps));
    params.lattice_max =
        static_cast<int>(opt_int(config, "converge.lattice_max", params.lattice_max));
    if (params.lattice_max > 0)
        params.spec = lattice_from_config(config, "converge.lattice");
    params.kernel = kernel_from_config(config, "converge.kernel");
    params.lsmc = lsmc_from_config(config, "converge.lsmc");
    params.eta = opt_num(config, "converge.eta", params.eta);
    clock.lap("setup");

    const ConvergenceReport rep = value_convergence_experiment(model, m0, grid, seed, params);
    clock.lap("experiment");

    CsvWriter out({"N", "backend", "value_rollout", "rollout_se", "value_table", "oracle",
                   "cauchy_diff", "tol_disc"});
    for (const ConvergenceRow& r : rep.rows)
        out.row({std::to_string(r.N), r.backend, format_double(r.value_rollout),
                 format_double(r.rollout_se), format_double(r.value_table),
                 format_double(r.oracle), format_double(r.cauchy_diff),
                 format_double(rep.tol_disc)});
    out.save(out_dir + "/converge.csv");
    man.outputs = {"converge.csv"};
    clock.lap("write");
    return man;
}

RunManifest run_check_derivatives(const nlohmann::json& config, std::uint64_t seed,
                                  const std::string& out_dir) {
    RunManifest man = start_manifest("check-derivatives", config, seed, out_dir);
    StageClock clock(man);

    std::vector<std::string> names = builtin_functional_names();
    if (const nlohmann::json* f = find_path(config, "derivatives.functionals")) {
        if (!f->is_array() || f->empty())
            bad_field("derivatives.functionals", "expected nonempty array");
        names.clear();
        for (const auto& cell : *f) {
            if (!cell.is_string()) bad_field("derivatives.functionals", "expected strings");
            names.push_back(cell.get<std::string>());
        }
    }
    std::vector<int> Ns = {1, 2, 5, 20};
    if (const nlohmann::json* n = find_path(config, "derivatives.Ns")) {
        if (!n->is_array() || n->empty()) bad_field("derivatives.Ns", "expected nonempty array");
        Ns.clear();
        for (const auto& cell : *n) {
            if (!cell.is_number_integer()) bad_field("derivatives.Ns", "expected integers");
            Ns.push_back(cell.get<int>());
        }
    }
    const int states = static_cast<int>(opt_int(config, "derivatives.states", 20));
    const double h_fd = opt_num(config, "derivatives.h_fd", 1e-4);
    const int dim = static_cast<int>(opt_int(config, "derivatives.dim", 1));
    const double t = opt_num(config, "derivatives.t", 0.3);
    if (states < 1) bad_field("derivatives.states", "must be positive");
    if (dim < 1) bad_field("derivatives.dim", "must be positive");
    clock.lap("setup");

    CsvWriter out({"functional", "N", "state", "worst_rel_error"});
    double overall = 0.0;
    for (const std::string& name : names) {
        const CylinderFunctional& U = builtin_functional(name);
        for (int N : Ns) {
            for (int s = 0; s < states; ++s) {
                Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(s),
                                      static_cast<std::uint64_t>(N), 3);
                Eigen::MatrixXd xs(N, dim);
                for (int k = 0; k < N; ++k)
                    for (int j = 0; j < dim; ++j) xs(k, j) = 4.0 * rng.uniform01() - 2.0;
                const EmpiricalMeasure m =
                    EmpiricalMeasure::uniform(xs, std::vector<std::uint8_t>(N, 1));
                const double worst = check_projection_derivatives(U, t, m, h_fd);
                overall = std::max(overall, worst);
                out.row({name, std::to_string(N), std::to_string(s), format_double(worst)});
            }
        }
    }
    clock.lap("check");

    out.save(out_dir + "/derivatives.csv");
    man.outputs = {"derivatives.csv"};
    man.warnings.push_back("worst relative discrepancy " + format_double(overall));
    clock.lap("write");
    return man;
}

RunManifest run_command(const std::string& name, const nlohmann::json& config, std::uint64_t seed,
                        const std::string& out_dir) {
    if (name == "simulate") return run_simulate(config, seed, out_dir);
    if (name == "solve") return run_solve(config, seed, out_dir);
    if (name == "policy-eval") return run_policy_eval(config, seed, out_dir);
    if (name == "chaos") return run_chaos(config, seed, out_dir);
    if (name == "converge") return run_converge(config, seed, out_dir);
    if (name == "check-derivatives") return run_check_derivatives(config, seed, out_dir);
    throw UsageError("unknown subcommand: " + name);
}

} // namespace mfstop
