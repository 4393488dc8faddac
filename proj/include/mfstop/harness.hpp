#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mfstop/chaos.hpp"
#include "mfstop/model.hpp"

namespace mfstop {

// shortest representation that round-trips the exact double
std::string format_double(double v);

class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header);
    void row(const std::vector<std::string>& cells);
    const std::string& body() const { return body_; }
    void save(const std::string& path) const;

private:
    size_t columns_;
    std::string body_;
};

// FNV-1a over the canonical (key-sorted) dump
std::uint64_t config_hash(const nlohmann::json& config);

// Config readers that name the offending field path in their errors.
const nlohmann::json* find_path(const nlohmann::json& c, const std::string& path);
double req_num(const nlohmann::json& c, const std::string& path);
double opt_num(const nlohmann::json& c, const std::string& path, double fallback);
std::int64_t req_int(const nlohmann::json& c, const std::string& path);
std::int64_t opt_int(const nlohmann::json& c, const std::string& path, std::int64_t fallback);
std::string req_str(const nlohmann::json& c, const std::string& path);
std::string opt_str(const nlohmann::json& c, const std::string& path, const std::string& fallback);

Model model_from_config(const nlohmann::json& config);
TimeGrid grid_from_config(const nlohmann::json& config);
EmpiricalMeasure measure_from_config(const nlohmann::json& config, const std::string& path,
                                     int expected_dim);
SurvivalLaw law_from_config(const nlohmann::json& config, const std::string& path, int n_steps);
StoppingRule rule_from_config(const nlohmann::json& config, const std::string& path, int n_steps);
LatticeSpec lattice_from_config(const nlohmann::json& config, const std::string& path);
LatticeKernel kernel_from_config(const nlohmann::json& config, const std::string& path);
LsmcOptions lsmc_from_config(const nlohmann::json& config, const std::string& path);

struct RunManifest {
    std::string command;
    std::uint64_t seed = 0;
    std::uint64_t config_digest = 0;
    std::string version;
    std::vector<std::pair<std::string, double>> timings_sec;
    std::vector<std::string> warnings;
    std::vector<std::string> outputs;

    nlohmann::json to_json() const;
    void save(const std::string& path) const;
};

// Experiment runners behind the CLI subcommands. Each consumes a config,
// writes CSV outputs under out_dir, and returns the manifest (not yet saved).
RunManifest run_simulate(const nlohmann::json& config, std::uint64_t seed,
                         const std::string& out_dir);
RunManifest run_solve(const nlohmann::json& config, std::uint64_t seed, const std::string& out_dir);
RunManifest run_policy_eval(const nlohmann::json& config, std::uint64_t seed,
                            const std::string& out_dir);
RunManifest run_chaos(const nlohmann::json& config, std::uint64_t seed, const std::string& out_dir);
RunManifest run_converge(const nlohmann::json& config, std::uint64_t seed,
                         const std::string& out_dir);
RunManifest run_check_derivatives(const nlohmann::json& config, std::uint64_t seed,
                                  const std::string& out_dir);

// dispatch by subcommand name; unknown names raise UsageError
RunManifest run_command(const std::string& name, const nlohmann::json& config, std::uint64_t seed,
                        const std::string& out_dir);

} // namespace mfstop
