// Command-line front end for the normative diffusion autoencoder pipeline.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error,
// 1 anything else.

#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "normdae/errors.hpp"
#include "normdae/pipeline.hpp"

namespace {

struct CliOptions {
    std::string config;
    std::string out = "out";
    std::optional<uint64_t> seed;
};

void add_common(CLI::App* cmd, CliOptions& opt) {
    cmd->add_option("--config", opt.config, "INI configuration file (optional; defaults apply)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", opt.out, "Run directory for artifacts")->capture_default_str();
    cmd->add_option("--seed", opt.seed, "Override the configured random seed");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Normative diffusion autoencoder pipeline"};
    app.require_subcommand(1);

    CliOptions opt;
    using Command = void (*)(const normdae::pipe::Settings&, const std::string&);
    struct Sub {
        const char* name;
        const char* help;
        Command run;
    };
    const Sub subs[] = {
        {"generate", "Generate the synthetic healthy and patient cohorts",
         &normdae::pipe::cmd_generate},
        {"train", "Train the diffusion autoencoder on the healthy cohort",
         &normdae::pipe::cmd_train},
        {"train-age-baseline", "Train the age-regression baseline encoder",
         &normdae::pipe::cmd_train_age_baseline},
        {"score", "Score patients against the healthy reference", &normdae::pipe::cmd_score},
        {"survival", "Run the survival analyses over the scores", &normdae::pipe::cmd_survival},
        {"report", "Collate run manifests into a summary report", &normdae::pipe::cmd_report},
    };
    Command selected = nullptr;
    for (const Sub& sub : subs) {
        CLI::App* cmd = app.add_subcommand(sub.name, sub.help);
        add_common(cmd, opt);
        cmd->callback([&selected, run = sub.run] { selected = run; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // --help and friends exit 0; every genuine usage/validation problem is
        // a configuration error under this tool's exit-code contract.
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const normdae::pipe::Settings settings = normdae::pipe::load_settings(opt.config, opt.seed);
        selected(settings, opt.out);
        return 0;
    } catch (const normdae::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        switch (e.kind()) {
            case normdae::ErrorKind::Config: return 2;
            case normdae::ErrorKind::Data: return 3;
            case normdae::ErrorKind::Numeric: return 4;
        }
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
