// starklab run <config.ini> | starklab summarize <dir>
// Exit status: 0 all verdicts pass, 1 some verdict fails, 2 error.

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "starklab/config.hpp"

int main(int argc, char** argv) {
    using namespace starklab;
    CLI::App app{"Stark-field scattering lab: experiment runner"};
    app.require_subcommand(1);
    int jobs = 0;
    app.add_option("--jobs,-j", jobs, "cap on worker threads (0: all cores)")->check(CLI::NonNegativeNumber);

    auto* run = app.add_subcommand("run", "run one experiment config");
    std::string config_path, output;
    run->add_option("config", config_path, "experiment .ini file")->required();
    run->add_option("--output,-o", output, "output directory (overrides the config)");

    auto* sum = app.add_subcommand("summarize", "aggregate verdicts from an output directory");
    std::string dir;
    sum->add_option("dir", dir, "directory holding run artifacts")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    set_worker_limit(jobs);

    try {
        if (*run) {
            const auto cfg = load_config(config_path);
            const auto out = resolve_output(output.empty() ? cfg.output_dir : std::filesystem::path(output));
            const auto res = run_experiment(cfg, out);
            std::cout << kind_name(cfg.kind) << " '" << cfg.name << "' -> " << out.string() << '\n' << res.summary;
            return res.all_pass() ? 0 : 1;
        }
        const auto s = summarize(dir);
        std::cout << s.text;
        return s.all_pass() ? 0 : 1;
    } catch (const LabError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
