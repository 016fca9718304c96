#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "transport/transport.hpp"

namespace fs = std::filesystem;
using namespace transport;

namespace {

enum Exit : int
{
    Ok = 0,
    Config = 2,
    Identification = 3,
    Numerical = 4,
};

struct Globals
{
    std::optional<std::uint64_t> seed;
};

fs::path config_path_for(const fs::path& out)
{
    return fs::path(out.string() + ".config.json");
}

void write_effective_config(const fs::path& out, const json& cfg)
{
    write_text_file(config_path_for(out), cfg.dump(2) + "\n");
}

void emit(const std::optional<std::string>& out, const std::string& text)
{
    if (out)
        write_text_file(*out, text);
    else
        std::cout << text;
}

//---------------------------------------------------------------------------//
// simulate
//---------------------------------------------------------------------------//

struct SimulateArgs
{
    std::string config;
    std::string out;
};

int cmd_simulate(const SimulateArgs& args, const Globals& g)
{
    const json cfg = read_json_file(args.config);
    DgpSpec dgp = dgp_from_json(detail::require_key(cfg, "dgp", "simulate"), "simulate.dgp");
    if (g.seed)
        dgp.seed = *g.seed;
    const DesignSpec design
        = design_from_json(detail::require_key(cfg, "design", "simulate"), "simulate.design");
    const auto n = detail::require_uint(cfg, "n", "simulate");
    DatasetMeta meta;
    meta.treatment_prob = TreatmentProbability::from_treated(dgp.treatment_prob);
    if (cfg.contains("k"))
        meta.aux_split = detail::require_uint(cfg, "k", "simulate");
    const double shift = cfg.value("generalizability_violation", 0.0);

    const auto population = simulate_actual_population(dgp, n, SimulationOptions{shift});
    const ObservedDataset data = apply_design(population, design, dgp.seed, meta);
    write_dataset(data, args.out);

    json effective = {
        {"dgp", to_json(dgp)},
        {"design", to_json(design, true)},
        {"n", n},
        {"k", data.aux_split()},
        {"generalizability_violation", shift},
    };
    write_effective_config(args.out, effective);

    std::cout << "trial arm 0: " << data.arm_count(0) << "\n"
              << "trial arm 1: " << data.arm_count(1) << "\n"
              << "nonrandomized sampled: " << data.external_count() << "\n";
    if (auto u = data.n_unsampled_nonrandomized())
        std::cout << "nonrandomized unsampled: " << *u << "\n";
    return Ok;
}

//---------------------------------------------------------------------------//
// estimate
//---------------------------------------------------------------------------//

struct EstimateArgs
{
    std::string dataset;
    std::string estimand = "target";
    std::string method = "gformula";
    std::string arm = "both";
    std::optional<double> truncate_q;
    std::string format = "json";
    std::optional<std::string> out;
};

std::vector<int> parse_arms(const std::string& arm)
{
    if (arm == "both")
        return {0, 1};
    if (arm == "0")
        return {0};
    if (arm == "1")
        return {1};
    throw ConfigError("--arm must be 0, 1 or both");
}

EstimatorId resolve_estimator(const std::string& estimand, const std::string& method)
{
    if (estimand == "target")
    {
        if (method == "gformula")
            return EstimatorId::GFormulaTarget;
        if (method == "ipw" || method == "ipw_hajek")
            return EstimatorId::IpwTargetHajek;
        if (method == "ipw_ht")
            return EstimatorId::IpwTargetHT;
    }
    else if (estimand == "nonrandomized")
    {
        if (method == "gformula")
            return EstimatorId::GFormulaNonRandomized;
        if (method == "ipw" || method == "ipw_hajek")
            return EstimatorId::IpwNonRandomized;
    }
    else if (estimand == "randomized")
    {
        if (method == "trial_mean" || method == "gformula")
            return EstimatorId::TrialOnly;
    }
    else
        throw ConfigError("--estimand must be target, nonrandomized or randomized");
    throw ConfigError("method '" + method + "' is not available for estimand '" + estimand + "'");
}

int cmd_estimate(const EstimateArgs& args, const Globals& g)
{
    const auto arms = parse_arms(args.arm);
    const EstimatorId id = resolve_estimator(args.estimand, args.method);
    if (args.format != "json" && args.format != "csv")
        throw ConfigError("--format must be json or csv");
    IpwOptions ipw;
    ipw.truncate_quantile = args.truncate_q;

    const ObservedDataset data = read_dataset(args.dataset);
    if (population_of(id) == Population::Target)
        require_identified(data.design(), Estimand::MeanTarget);

    FittedModels models(data, {});
    std::vector<EstimateReport> reports;
    for (int arm : arms)
        reports.push_back(run_estimator(data, id, arm, models, ipw));

    std::string text;
    if (args.format == "csv")
    {
        text = std::string(estimate_csv_header) + "\n";
        for (const auto& r : reports)
            text += to_csv_row(r) + "\n";
    }
    else
    {
        json doc = {{"design", to_json(data.design())}, {"estimates", json::array()}};
        for (const auto& r : reports)
            doc["estimates"].push_back(to_json(r));
        if (models.has_participation())
            doc["participation_model"] = to_json(models.participation());
        if (needs_outcome_model(id))
            doc["outcome_model"] = to_json(models.outcome());
        text = doc.dump(2) + "\n";
    }
    emit(args.out, text);

    if (args.out)
    {
        json effective = {
            {"command", "estimate"},
            {"dataset", args.dataset},
            {"estimand", args.estimand},
            {"method", args.method},
            {"arm", args.arm},
            {"format", args.format},
        };
        effective["truncate_q"] = args.truncate_q ? json(*args.truncate_q) : json(nullptr);
        effective["seed"] = g.seed ? json(*g.seed) : json(nullptr);
        write_effective_config(*args.out, effective);
    }
    for (const auto& r : reports)
        for (const auto& w : r.warnings)
            std::cerr << "warning: arm " << r.arm << ": " << w << "\n";
    return Ok;
}

//---------------------------------------------------------------------------//
// diagnose
//---------------------------------------------------------------------------//

struct DiagnoseArgs
{
    std::string dataset;
    std::size_t bootstrap = 200;
    std::optional<std::string> out;
};

int cmd_diagnose(const DiagnoseArgs& args, const Globals& g)
{
    const ObservedDataset data = read_dataset(args.dataset);
    if (data.external_count() == 0)
        throw NoExternalRows();
    const std::uint64_t seed = g.seed.value_or(1);

    json doc = {{"design", to_json(data.design())}, {"bootstrap", args.bootstrap},
                {"seed", seed}, {"arms", json::array()}};
    std::string table = "arm,randomized,nonrandomized,difference,boot_se\n";
    const OutcomeModel outcome = fit_outcome(data);
    for (int arm : {0, 1})
    {
        const double randomized = *trial_only_mean(data, arm).value;
        const double nonrandomized = *gformula_mean_nonrandomized(data, outcome, arm).value;
        const double diff = randomized - nonrandomized;
        const double se = bootstrap_se(
            data,
            [arm](const ObservedDataset& d) {
                return *trial_only_mean(d, arm).value
                       - *gformula_mean_nonrandomized(d, fit_outcome(d), arm).value;
            },
            args.bootstrap, mix_seed(seed, static_cast<std::uint64_t>(arm)));
        doc["arms"].push_back({{"arm", arm},
                               {"randomized", randomized},
                               {"nonrandomized", nonrandomized},
                               {"difference", diff},
                               {"boot_se", se}});
        table += std::to_string(arm) + "," + format_double(randomized) + ","
                 + format_double(nonrandomized) + "," + format_double(diff) + ","
                 + format_double(se) + "\n";
    }
    std::cout << table;
    if (args.out)
    {
        write_text_file(*args.out, doc.dump(2) + "\n");
        write_effective_config(*args.out, {{"command", "diagnose"},
                                           {"dataset", args.dataset},
                                           {"bootstrap", args.bootstrap},
                                           {"seed", seed}});
    }
    return Ok;
}

//---------------------------------------------------------------------------//
// experiment / sweep
//---------------------------------------------------------------------------//

struct ExperimentArgs
{
    std::string config;
    std::optional<std::string> out;
    unsigned workers = 1;
};

int run_experiment_command(const ExperimentArgs& args, const Globals& g, bool require_grid)
{
    const json raw = read_json_file(args.config);
    const bool grid = has_design_grid(raw);
    if (require_grid && !grid)
        throw ConfigError("sweep: config needs \"designs\" or \"c_values\"");

    json base_json = raw;
    if (grid && !base_json.contains("design"))
        base_json["design"] = json{{"type", "census"}};
    ExperimentConfig cfg = experiment_config_from_json(base_json);
    if (g.seed)
        cfg.master_seed = *g.seed;
    if (args.workers == 0)
        throw ConfigError("--workers must be positive");

    std::vector<ExperimentSummary> summaries;
    json effective = to_json(cfg);
    if (grid)
    {
        const auto cells = design_grid_from_json(raw);
        effective.erase("design");
        effective["designs"] = to_json(cells);
        summaries = design_comparison(cfg, cells, args.workers);
    }
    else
        summaries.push_back(run_experiment(cfg, args.workers));

    emit(args.out, summary_to_csv(summaries));
    if (args.out)
        write_effective_config(*args.out, effective);

    for (const auto& s : summaries)
    {
        if (s.failures > 0)
            std::cerr << s.design << ": " << s.failures << " of " << s.replications
                      << " replications failed (first: " << s.failure_messages.front() << ")\n";
    }
    return Ok;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Trial-to-target-population transport: simulation, estimation and experiments"};
    app.require_subcommand(1);
    Globals globals;
    app.add_option("--seed", globals.seed, "Override every seed in the config");

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Simulate a population and apply a design");
    simulate->add_option("config", sim.config, "Simulation config JSON")->required();
    simulate->add_option("-o,--out", sim.out, "Dataset CSV path (sidecar written next to it)")
        ->required();

    EstimateArgs est;
    auto* estimate = app.add_subcommand("estimate", "Fit models and estimate potential-outcome means");
    estimate->add_option("dataset", est.dataset, "Dataset CSV")->required();
    estimate->add_option("--estimand", est.estimand, "target | nonrandomized | randomized");
    estimate->add_option("--method", est.method, "gformula | ipw | ipw_ht | ipw_hajek | trial_mean");
    estimate->add_option("--arm", est.arm, "0 | 1 | both");
    estimate->add_option("--truncate-q", est.truncate_q, "Cap IP weights at this quantile");
    estimate->add_option("--format", est.format, "json | csv");
    estimate->add_option("-o,--out", est.out, "Report path (stdout when omitted)");

    DiagnoseArgs diag;
    auto* diagnose = app.add_subcommand("diagnose", "Compare trial and non-randomized means");
    diagnose->add_option("dataset", diag.dataset, "Dataset CSV")->required();
    diagnose->add_option("--bootstrap", diag.bootstrap, "Bootstrap replicates (>= 100)");
    diagnose->add_option("-o,--out", diag.out, "JSON report path");

    ExperimentArgs exp;
    auto* experiment = app.add_subcommand("experiment", "Monte Carlo replication study");
    experiment->add_option("config", exp.config, "Experiment config JSON")->required();
    experiment->add_option("-o,--out", exp.out, "Summary CSV path (stdout when omitted)");
    experiment->add_option("--workers", exp.workers, "Worker threads");

    ExperimentArgs swp;
    auto* sweep = app.add_subcommand("sweep", "Replication study over a grid of designs");
    sweep->add_option("config", swp.config, "Sweep config JSON")->required();
    sweep->add_option("-o,--out", swp.out, "Summary CSV path (stdout when omitted)");
    sweep->add_option("--workers", swp.workers, "Worker threads");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::CallForHelp& e)
    {
        return app.exit(e);
    }
    catch (const CLI::CallForAllHelp& e)
    {
        return app.exit(e);
    }
    catch (const CLI::ParseError& e)
    {
        app.exit(e);
        return Config;
    }

    try
    {
        if (*simulate)
            return cmd_simulate(sim, globals);
        if (*estimate)
            return cmd_estimate(est, globals);
        if (*diagnose)
            return cmd_diagnose(diag, globals);
        if (*experiment)
            return run_experiment_command(exp, globals, false);
        if (*sweep)
            return run_experiment_command(swp, globals, true);
    }
    catch (const NotIdentifiable& e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return Identification;
    }
    catch (const NumericalError& e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return Numerical;
    }
    catch (const Error& e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return Config;
    }
    catch (const json::exception& e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return Config;
    }
    return Ok;
}
