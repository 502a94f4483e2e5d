// Command line front end: simulate, fit, gc, metrics.
//
// Exit codes: 0 success, 2 configuration, 3 input/output or data shape,
// 4 computation (sampler or simulation failure), 1 anything else. Errors
// are printed as "error: <category>: <message>".

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "btdvar/io.hpp"

namespace {

struct Args {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string resume;
};

int fail(const char* category, const std::string& message, int code) {
    std::cerr << "error: " << category << ": " << message << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian Tucker-decomposed VAR: simulation, fitting and Granger-causality networks"};
    app.set_version_flag("--version", btdvar::version_string());
    app.require_subcommand(1);

    Args args;
    for (const char* name : {"simulate", "fit", "gc", "metrics"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", args.config, "key = value configuration file")->required();
        sub->add_option("--seed", args.seed, "overrides the configured seed");
        sub->add_option("--out", args.out, "output directory")->required();
        sub->add_option("--resume", args.resume, "checkpoint to continue from (fit only)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);
        }
        return fail("config", e.what(), 2);
    }

    const std::string mode = app.get_subcommands().front()->get_name();
    try {
        btdvar::RunConfig cfg = btdvar::load_run_config(args.config, mode);
        if (args.seed) {
            cfg.seed = *args.seed;
            cfg.sampler.seed = *args.seed;
        }
        if (!args.resume.empty() && mode != "fit") {
            throw btdvar::ConfigError("--resume only applies to fit");
        }
        const btdvar::fs::path out(args.out);
        if (mode == "simulate") {
            btdvar::run_simulate(cfg, out);
        } else if (mode == "fit") {
            std::optional<btdvar::fs::path> resume;
            if (!args.resume.empty()) {
                resume = args.resume;
            }
            btdvar::run_fit(cfg, out, resume);
        } else if (mode == "gc") {
            btdvar::run_gc(cfg, out);
        } else {
            btdvar::run_metrics(cfg, out);
        }
    } catch (const btdvar::ConfigError& e) {
        return fail("config", e.what(), 2);
    } catch (const btdvar::IoError& e) {
        return fail("io", e.what(), 3);
    } catch (const btdvar::DimensionError& e) {
        return fail("data", e.what(), 3);
    } catch (const btdvar::SamplerError& e) {
        return fail("compute", e.what(), 4);
    } catch (const btdvar::UnstableError& e) {
        return fail("compute", e.what(), 4);
    } catch (const std::filesystem::filesystem_error& e) {
        return fail("io", e.what(), 3);
    } catch (const std::exception& e) {
        return fail("internal", e.what(), 1);
    }
    return 0;
}
