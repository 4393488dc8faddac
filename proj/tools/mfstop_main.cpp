#include <cstdio>
#include <exception>
#include <fstream>

#include "CLI11.hpp"
#include "mfstop/harness.hpp"

namespace {

nlohmann::json load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw mfstop::UsageError("cannot open config " + path);
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw mfstop::ValidationError("config " + path + ": " + e.what());
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"mean-field multiple stopping toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string out_dir = ".";
    std::uint64_t seed = 0;
    int threads = 1;
    app.add_option("--config", config_path, "experiment config (JSON)");
    CLI::Option* seed_opt = app.add_option("--seed", seed, "RNG seed (overrides config)");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--threads", threads, "worker threads (runs are sequential; recorded only)")
        ->check(CLI::PositiveNumber);

    for (const char* name : {"simulate", "solve", "policy-eval", "chaos", "converge",
                             "check-derivatives"})
        app.add_subcommand(name, "");

    CLI11_PARSE(app, argc, argv);

    try {
        if (config_path.empty()) throw mfstop::UsageError("--config is required");
        const nlohmann::json config = load_config(config_path);
        if (seed_opt->count() == 0) {
            const nlohmann::json* s = mfstop::find_path(config, "seed");
            if (!s || !s->is_number_unsigned())
                throw mfstop::UsageError("seed required: pass --seed or set config.seed");
            seed = s->get<std::uint64_t>();
        }
        const std::string cmd = app.get_subcommands().front()->get_name();
        mfstop::RunManifest man = mfstop::run_command(cmd, config, seed, out_dir);
        man.save(out_dir + "/manifest.json");
        for (const std::string& f : man.outputs) std::printf("wrote %s/%s\n", out_dir.c_str(), f.c_str());
        for (const std::string& w : man.warnings) std::printf("note: %s\n", w.c_str());
        return 0;
    } catch (const mfstop::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const mfstop::UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const mfstop::EvalError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
