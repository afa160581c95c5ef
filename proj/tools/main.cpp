// pamm: PED transform, model fitting, evaluation and the simulation harness.
//
// Exit codes: 0 success, 2 config or input error, 3 numeric failure.

#include <CLI11.hpp>

#include <iostream>

#include "commands.hpp"

namespace {

struct Sub {
    CLI::App* app = nullptr;
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    unsigned threads = 0;
};

void add_common(Sub& s) {
    s.app->add_option("-c,--config", s.config, "JSON run config")->required()->check(CLI::ExistingFile);
    s.app->add_option("--seed", s.seed, "override the config seed");
    s.app->add_option("--out", s.out, "override the output directory");
    s.app->add_option("--threads", s.threads, "override the thread count (0 = all cores)");
}

pamm::cli::Overrides overrides(const Sub& s) {
    pamm::cli::Overrides ov;
    if (s.app->count("--seed")) ov.seed = s.seed;
    if (s.app->count("--out")) ov.out = s.out;
    if (s.app->count("--threads")) ov.threads = s.threads;
    return ov;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Piecewise exponential additive mixed models"};
    app.set_version_flag("--version", std::string("pamm ") + PAMM_VERSION);
    app.require_subcommand(1);
    Sub ped, fit, evaluate, simulate;
    ped.app = app.add_subcommand("ped", "transform survival data to PED format");
    fit.app = app.add_subcommand("fit", "fit a PAMM to a PED file");
    evaluate.app = app.add_subcommand("evaluate", "log-likelihood, AIC and IBS of a fitted model");
    simulate.app = app.add_subcommand("simulate", "run the simulation harness");
    for (Sub* s : {&ped, &fit, &evaluate, &simulate}) add_common(*s);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    using namespace pamm::cli;
    try {
        if (*ped.app) cmd_ped(load_config(ped.config), overrides(ped), std::cerr);
        else if (*fit.app) cmd_fit(load_config(fit.config), overrides(fit), std::cerr);
        else if (*evaluate.app) cmd_evaluate(load_config(evaluate.config), overrides(evaluate), std::cerr);
        else if (*simulate.app) cmd_simulate(load_config(simulate.config), overrides(simulate), std::cerr);
    } catch (const pamm::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const pamm::InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
