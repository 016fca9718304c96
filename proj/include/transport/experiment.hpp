#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "transport/detail/math.hpp"
#include "transport/dgp.hpp"
#include "transport/domain.hpp"
#include "transport/errors.hpp"
#include "transport/estimators.hpp"
#include "transport/io.hpp"
#include "transport/outcome.hpp"
#include "transport/participation.hpp"
#include "transport/rng.hpp"
#include "transport/sampling.hpp"

namespace transport {

//---------------------------------------------------------------------------//
// Estimator catalogue
//---------------------------------------------------------------------------//

enum class EstimatorId
{
    GFormulaTarget,
    GFormulaNonRandomized,
    IpwTargetHT,
    IpwTargetHajek,
    IpwNonRandomized,
    TrialOnly,
};

inline constexpr std::array<EstimatorId, 6> all_estimators = {
    EstimatorId::GFormulaTarget, EstimatorId::GFormulaNonRandomized, EstimatorId::IpwTargetHT,
    EstimatorId::IpwTargetHajek, EstimatorId::IpwNonRandomized,      EstimatorId::TrialOnly,
};

inline std::string_view to_string(EstimatorId id)
{
    switch (id)
    {
        case EstimatorId::GFormulaTarget: return "gformula_target";
        case EstimatorId::GFormulaNonRandomized: return "gformula_nonrandomized";
        case EstimatorId::IpwTargetHT: return "ipw_ht_target";
        case EstimatorId::IpwTargetHajek: return "ipw_hajek_target";
        case EstimatorId::IpwNonRandomized: return "ipw_nonrandomized";
        case EstimatorId::TrialOnly: return "trial_only";
    }
    return "?";
}

inline EstimatorId estimator_from_string(std::string_view name)
{
    for (auto id : all_estimators)
        if (to_string(id) == name)
            return id;
    throw ConfigError("unknown estimator '" + std::string(name) + "'");
}

inline Population population_of(EstimatorId id)
{
    switch (id)
    {
        case EstimatorId::GFormulaTarget:
        case EstimatorId::IpwTargetHT:
        case EstimatorId::IpwTargetHajek: return Population::Target;
        case EstimatorId::GFormulaNonRandomized:
        case EstimatorId::IpwNonRandomized: return Population::NonRandomized;
        case EstimatorId::TrialOnly: return Population::Randomized;
    }
    return Population::Target;
}

inline Method method_of(EstimatorId id)
{
    switch (id)
    {
        case EstimatorId::GFormulaTarget:
        case EstimatorId::GFormulaNonRandomized: return Method::GFormula;
        case EstimatorId::IpwTargetHT: return Method::IpwHT;
        case EstimatorId::IpwTargetHajek:
        case EstimatorId::IpwNonRandomized: return Method::IpwHajek;
        case EstimatorId::TrialOnly: return Method::TrialMean;
    }
    return Method::GFormula;
}

inline bool needs_participation_model(EstimatorId id)
{
    return id == EstimatorId::IpwTargetHT || id == EstimatorId::IpwTargetHajek
           || id == EstimatorId::IpwNonRandomized;
}

inline bool needs_outcome_model(EstimatorId id)
{
    return id == EstimatorId::GFormulaTarget || id == EstimatorId::GFormulaNonRandomized;
}

struct Misspecification
{
    bool participation = false;          //!< fit participation on the intercept only
    bool outcome = false;                //!< fit outcome regressions on the intercept only
    double generalizability_violation = 0.0; //!< outcome shift for non-participants
};

//! Models shared by the estimators of one dataset; fitted on first use.
class FittedModels
{
  public:
    FittedModels(const ObservedDataset& data, const Misspecification& mis)
        : data_(data), mis_(mis)
    {
    }

    const ParticipationModel& participation()
    {
        if (!participation_)
        {
            ParticipationFitOptions opts;
            if (mis_.participation)
                opts.columns = std::vector<std::size_t>{};
            participation_ = fit_participation(data_, opts);
        }
        return *participation_;
    }

    const OutcomeModel& outcome()
    {
        if (!outcome_)
        {
            OutcomeFitOptions opts;
            if (mis_.outcome)
                opts.columns = std::vector<std::size_t>{};
            outcome_ = fit_outcome(data_, opts);
        }
        return *outcome_;
    }

    bool has_participation() const { return participation_.has_value(); }

  private:
    const ObservedDataset& data_;
    Misspecification mis_;
    std::optional<ParticipationModel> participation_;
    std::optional<OutcomeModel> outcome_;
};

/*!
 * Run one catalogued estimator. Identification is checked against the
 * design before any model is fitted; NotIdentifiable propagates.
 */
inline EstimateReport run_estimator(const ObservedDataset& data,
                                    EstimatorId id,
                                    int arm,
                                    FittedModels& models,
                                    const IpwOptions& ipw = {})
{
    if (population_of(id) == Population::Target)
        require_identified(data.design(), Estimand::MeanTarget);
    switch (id)
    {
        case EstimatorId::GFormulaTarget: return gformula_mean_target(data, models.outcome(), arm);
        case EstimatorId::GFormulaNonRandomized:
            return gformula_mean_nonrandomized(data, models.outcome(), arm);
        case EstimatorId::IpwTargetHT:
            return ipw_mean_target(data, models.participation(), arm, IpwVariant::HorvitzThompson, ipw);
        case EstimatorId::IpwTargetHajek:
            return ipw_mean_target(data, models.participation(), arm, IpwVariant::Hajek, ipw);
        case EstimatorId::IpwNonRandomized:
            return ipw_mean_nonrandomized(data, models.participation(), arm, ipw);
        case EstimatorId::TrialOnly: return trial_only_mean(data, arm);
    }
    throw InvalidArgument("unknown estimator");
}

struct EstimatorSpec
{
    EstimatorId id = EstimatorId::GFormulaTarget;
    int arm = 1;
    Misspecification misspecify;
    IpwOptions ipw;
};

inline double evaluate_estimator(const ObservedDataset& data, const EstimatorSpec& spec)
{
    FittedModels models(data, spec.misspecify);
    return run_estimator(data, spec.id, spec.arm, models, spec.ipw).value.value();
}

//---------------------------------------------------------------------------//
// Bootstrap
//---------------------------------------------------------------------------//

/*!
 * Stratified nonparametric bootstrap resample: trial rows and external rows
 * are each drawn with replacement to their original counts; the design,
 * metadata and unsampled tally carry over unchanged.
 */
inline ObservedDataset bootstrap_resample(const ObservedDataset& data, std::uint64_t seed)
{
    std::vector<std::size_t> trial, external;
    for (std::size_t i = 0; i < data.size(); ++i)
        (is_trial(data.records()[i]) ? trial : external).push_back(i);

    Xoshiro256 rng(seed);
    std::vector<ObservedRecord> records;
    records.reserve(data.size());
    for (const auto* stratum : {&trial, &external})
    {
        if (stratum->empty())
            continue;
        std::uniform_int_distribution<std::size_t> pick(0, stratum->size() - 1);
        for (std::size_t i = 0; i < stratum->size(); ++i)
            records.push_back(data.records()[(*stratum)[pick(rng)]]);
    }
    return ObservedDataset(std::move(records), data.design(), data.dimension(), data.aux_split(),
                           data.treatment_prob(), data.n_unsampled_nonrandomized());
}

/*!
 * Bootstrap standard error of an arbitrary statistic. Resample b uses
 * item_seed(seed, bootstrap, b). Resamples on which the statistic fails
 * (e.g. an empty arm) are skipped.
 */
inline double bootstrap_se(const ObservedDataset& data,
                           const std::function<double(const ObservedDataset&)>& statistic,
                           std::size_t replicates,
                           std::uint64_t seed)
{
    if (replicates < 100)
        throw InvalidArgument("bootstrap needs at least 100 replicates");
    detail::Moments draws;
    for (std::size_t b = 0; b < replicates; ++b)
    {
        try
        {
            draws.add(statistic(bootstrap_resample(data, item_seed(seed, Stream::bootstrap, b))));
        }
        catch (const NotIdentifiable&)
        {
            throw;
        }
        catch (const Error&)
        {
        }
    }
    if (draws.n < 2)
        throw InsufficientData("bootstrap: fewer than two successful resamples");
    return draws.sd();
}

inline double bootstrap_se(const ObservedDataset& data,
                           const EstimatorSpec& spec,
                           std::size_t replicates,
                           std::uint64_t seed)
{
    return bootstrap_se(
        data, [&](const ObservedDataset& d) { return evaluate_estimator(d, spec); }, replicates,
        seed);
}

//---------------------------------------------------------------------------//
// Replication harness
//---------------------------------------------------------------------------//

struct ExperimentConfig
{
    DgpSpec dgp;
    DesignSpec design;
    std::size_t n = 10000;
    std::size_t replications = 100;
    std::uint64_t master_seed = 1;
    std::vector<EstimatorId> estimators{all_estimators.begin(), all_estimators.end()};
    std::vector<int> arms{0, 1};
    Misspecification misspecify;
    std::size_t bootstrap = 0; //!< B; 0 disables
    std::size_t oracle_m = 1'000'000;
    std::optional<std::uint64_t> oracle_seed;
    IpwOptions ipw;

    void validate() const
    {
        dgp.validate();
        design.validate();
        if (n == 0)
            throw InvalidArgument("experiment: n must be positive");
        if (replications == 0)
            throw InvalidArgument("experiment: replications must be at least 1");
        if (bootstrap != 0 && bootstrap < 100)
            throw InvalidArgument("experiment: bootstrap must be 0 or at least 100");
        if (estimators.empty() || arms.empty())
            throw InvalidArgument("experiment: estimators and arms must be nonempty");
        for (int a : arms)
            if (a != 0 && a != 1)
                throw InvalidArgument("experiment: arms must be 0 or 1");
    }

    std::uint64_t resolved_oracle_seed() const
    {
        return oracle_seed.value_or(stream_seed(master_seed, Stream::oracle));
    }
};

//! Per-replication seed: item_seed(master_seed, replication, r).
inline std::uint64_t replication_seed(std::uint64_t master_seed, std::size_t r)
{
    return item_seed(master_seed, Stream::replication, r);
}

struct ReplicationResult
{
    //! One entry per (estimator, arm) cell, estimator-major.
    std::vector<std::optional<double>> values;
    std::vector<bool> not_identifiable;
    std::vector<std::optional<double>> boot_se;
    std::vector<double> participation_coefficients;
    std::optional<std::string> failure;
};

//! Simulate, sample, fit and estimate for replication r.
inline ReplicationResult run_replication(const ExperimentConfig& cfg, std::size_t r)
{
    const std::size_t cells = cfg.estimators.size() * cfg.arms.size();
    ReplicationResult out;
    out.values.assign(cells, std::nullopt);
    out.not_identifiable.assign(cells, false);
    out.boot_se.assign(cells, std::nullopt);

    const std::uint64_t seed = replication_seed(cfg.master_seed, r);
    try
    {
        DgpSpec dgp = cfg.dgp;
        dgp.seed = seed;
        const auto population = simulate_actual_population(
            dgp, cfg.n, SimulationOptions{cfg.misspecify.generalizability_violation});
        DatasetMeta meta;
        meta.treatment_prob = TreatmentProbability::from_treated(dgp.treatment_prob);
        const ObservedDataset data = apply_design(population, cfg.design, seed, meta);

        FittedModels models(data, cfg.misspecify);
        std::size_t cell = 0;
        for (EstimatorId id : cfg.estimators)
        {
            for (int arm : cfg.arms)
            {
                try
                {
                    out.values[cell] = run_estimator(data, id, arm, models, cfg.ipw).value;
                    if (cfg.bootstrap > 0)
                        out.boot_se[cell] = bootstrap_se(
                            data, EstimatorSpec{id, arm, cfg.misspecify, cfg.ipw}, cfg.bootstrap,
                            mix_seed(seed, cell));
                }
                catch (const NotIdentifiable&)
                {
                    out.not_identifiable[cell] = true;
                }
                ++cell;
            }
        }
        if (models.has_participation())
            out.participation_coefficients = models.participation().coefficients;
    }
    catch (const Error& e)
    {
        out.failure = e.what();
        std::fill(out.values.begin(), out.values.end(), std::nullopt);
    }
    return out;
}

struct SummaryRow
{
    EstimatorId estimator = EstimatorId::GFormulaTarget;
    int arm = 1;
    double truth = 0.0;
    double mean = std::numeric_limits<double>::quiet_NaN();
    double bias = std::numeric_limits<double>::quiet_NaN();
    double sd = std::numeric_limits<double>::quiet_NaN();
    double rmse = std::numeric_limits<double>::quiet_NaN();
    double not_identifiable_frac = 0.0;
    std::optional<double> boot_se_mean;
    std::size_t estimates = 0; //!< replications contributing a value
};

struct ExperimentSummary
{
    std::string design;
    std::optional<double> c;
    std::size_t n = 0;
    std::size_t replications = 0;
    std::vector<SummaryRow> rows;
    std::size_t failures = 0;
    std::vector<std::string> failure_messages; //!< first few, in replication order
    OracleTruth truth;
    //! Fitted participation coefficients per successful replication.
    std::vector<std::vector<double>> participation_coefficients;
};

inline double oracle_value(const OracleTruth& truth, Population pop, int arm)
{
    const auto a = static_cast<std::size_t>(arm);
    switch (pop)
    {
        case Population::Target: return truth.mean_target.value[a];
        case Population::NonRandomized: return truth.mean_nonrandomized.value[a];
        case Population::Randomized: return truth.mean_randomized.value[a];
    }
    return 0.0;
}

inline OracleTruth experiment_oracle(const ExperimentConfig& cfg)
{
    return oracle_truth(cfg.dgp, cfg.oracle_m, cfg.resolved_oracle_seed(),
                        SimulationOptions{cfg.misspecify.generalizability_violation});
}

/*!
 * Monte Carlo replication study.
 *
 * Replications run on up to `workers` threads; results are reduced in
 * replication order so the summary is identical for any worker count.
 * A replication that fails numerically is tallied, not fatal.
 */
inline ExperimentSummary run_experiment(const ExperimentConfig& cfg,
                                        unsigned workers = 1,
                                        const OracleTruth* precomputed_truth = nullptr)
{
    cfg.validate();
    ExperimentSummary summary;
    summary.design = std::string(cfg.design.name());
    summary.c = cfg.design.is<SubsampledNested>() ? cfg.design.constant_fraction() : std::nullopt;
    summary.n = cfg.n;
    summary.replications = cfg.replications;
    summary.truth = precomputed_truth ? *precomputed_truth : experiment_oracle(cfg);

    std::vector<ReplicationResult> results(cfg.replications);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t r = next++; r < cfg.replications; r = next++)
            results[r] = run_replication(cfg, r);
    };
    const unsigned threads
        = std::max(1U, std::min<unsigned>(workers, static_cast<unsigned>(cfg.replications)));
    if (threads == 1)
        worker();
    else
    {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t)
            pool.emplace_back(worker);
    }

    for (const auto& res : results)
    {
        if (res.failure)
        {
            ++summary.failures;
            if (summary.failure_messages.size() < 10)
                summary.failure_messages.push_back(*res.failure);
        }
        else if (!res.participation_coefficients.empty())
            summary.participation_coefficients.push_back(res.participation_coefficients);
    }

    std::size_t cell = 0;
    for (EstimatorId id : cfg.estimators)
    {
        for (int arm : cfg.arms)
        {
            SummaryRow row;
            row.estimator = id;
            row.arm = arm;
            row.truth = oracle_value(summary.truth, population_of(id), arm);
            detail::Moments est, boot;
            double sq_err = 0.0;
            std::size_t ni = 0;
            for (const auto& res : results)
            {
                if (res.not_identifiable[cell])
                    ++ni;
                if (res.values[cell])
                {
                    est.add(*res.values[cell]);
                    const double err = *res.values[cell] - row.truth;
                    sq_err += err * err;
                }
                if (res.boot_se[cell])
                    boot.add(*res.boot_se[cell]);
            }
            row.not_identifiable_frac
                = static_cast<double>(ni) / static_cast<double>(cfg.replications);
            row.estimates = est.n;
            if (est.n > 0)
            {
                row.mean = est.mean;
                row.bias = row.mean - row.truth;
                row.sd = est.n > 1 ? est.sd() : 0.0;
                row.rmse = std::sqrt(sq_err / static_cast<double>(est.n));
            }
            if (boot.n > 0)
                row.boot_se_mean = boot.mean;
            summary.rows.push_back(row);
            ++cell;
        }
    }
    return summary;
}

//---------------------------------------------------------------------------//
// Output
//---------------------------------------------------------------------------//

inline constexpr std::string_view summary_csv_header
    = "estimand,arm,method,design,c,n,R,truth,mean,bias,sd,rmse,not_identifiable_frac,boot_se_mean";

inline std::string summary_csv_rows(const ExperimentSummary& s)
{
    auto num = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
    std::string out;
    for (const auto& row : s.rows)
    {
        out += to_string(population_of(row.estimator));
        out += ',' + std::to_string(row.arm) + ',';
        out += to_string(method_of(row.estimator));
        out += ',' + s.design;
        out += ',' + (s.c ? format_double(*s.c) : std::string());
        out += ',' + std::to_string(s.n) + ',' + std::to_string(s.replications);
        out += ',' + num(row.truth) + ',' + num(row.mean) + ',' + num(row.bias);
        out += ',' + num(row.sd) + ',' + num(row.rmse);
        out += ',' + format_double(row.not_identifiable_frac);
        out += ',' + (row.boot_se_mean ? format_double(*row.boot_se_mean) : std::string());
        out += '\n';
    }
    return out;
}

inline std::string summary_to_csv(const std::vector<ExperimentSummary>& summaries)
{
    std::string out(summary_csv_header);
    out += '\n';
    for (const auto& s : summaries)
        out += summary_csv_rows(s);
    return out;
}

inline std::string summary_to_csv(const ExperimentSummary& s)
{
    return summary_to_csv(std::vector<ExperimentSummary>{s});
}

//! One experiment per design cell, sharing the base config and one oracle.
inline std::vector<ExperimentSummary> design_comparison(const ExperimentConfig& base,
                                                        const std::vector<DesignSpec>& cells,
                                                        unsigned workers = 1)
{
    if (cells.empty())
        throw InvalidArgument("design comparison: grid is empty");
    base.validate();
    const OracleTruth truth = experiment_oracle(base);
    std::vector<ExperimentSummary> out;
    for (const auto& design : cells)
    {
        ExperimentConfig cfg = base;
        cfg.design = design;
        out.push_back(run_experiment(cfg, workers, &truth));
    }
    return out;
}

//---------------------------------------------------------------------------//
// Config JSON
//---------------------------------------------------------------------------//

inline json to_json(const ExperimentConfig& cfg)
{
    json est = json::array();
    for (auto id : cfg.estimators)
        est.push_back(std::string(to_string(id)));
    json j = {
        {"dgp", to_json(cfg.dgp)},
        {"design", to_json(cfg.design, true)},
        {"n", cfg.n},
        {"replications", cfg.replications},
        {"master_seed", cfg.master_seed},
        {"estimators", est},
        {"arms", cfg.arms},
        {"misspecify",
         {{"participation", cfg.misspecify.participation},
          {"outcome", cfg.misspecify.outcome},
          {"generalizability_violation", cfg.misspecify.generalizability_violation}}},
        {"bootstrap", cfg.bootstrap},
        {"oracle_m", cfg.oracle_m},
        {"oracle_seed", cfg.resolved_oracle_seed()},
    };
    if (cfg.ipw.truncate_quantile)
        j["truncate_q"] = *cfg.ipw.truncate_quantile;
    return j;
}

inline ExperimentConfig experiment_config_from_json(const json& j,
                                                    const std::string& where = "experiment")
{
    ExperimentConfig cfg;
    cfg.dgp = dgp_from_json(detail::require_key(j, "dgp", where), where + ".dgp");
    cfg.design = design_from_json(detail::require_key(j, "design", where), where + ".design");
    cfg.n = detail::require_uint(j, "n", where);
    cfg.replications = detail::require_uint(j, "replications", where);
    cfg.master_seed = detail::require_uint(j, "master_seed", where);
    if (j.contains("estimators"))
    {
        cfg.estimators.clear();
        for (const auto& e : j.at("estimators"))
        {
            if (!e.is_string())
                throw ConfigError(where + ".estimators: expected strings");
            cfg.estimators.push_back(estimator_from_string(e.get<std::string>()));
        }
    }
    if (j.contains("arms"))
    {
        cfg.arms.clear();
        for (double a : detail::require_numbers(j, "arms", where))
            cfg.arms.push_back(static_cast<int>(a));
    }
    if (j.contains("misspecify"))
    {
        const auto& m = j.at("misspecify");
        cfg.misspecify.participation = m.value("participation", false);
        cfg.misspecify.outcome = m.value("outcome", false);
        cfg.misspecify.generalizability_violation = m.value("generalizability_violation", 0.0);
    }
    if (j.contains("bootstrap"))
        cfg.bootstrap = detail::require_uint(j, "bootstrap", where);
    if (j.contains("oracle_m"))
        cfg.oracle_m = detail::require_uint(j, "oracle_m", where);
    if (j.contains("oracle_seed"))
        cfg.oracle_seed = detail::require_uint(j, "oracle_seed", where);
    if (j.contains("truncate_q"))
        cfg.ipw.truncate_quantile = detail::require_number(j, "truncate_q", where);
    detail::validate_as_config([&] { cfg.validate(); }, where);
    return cfg;
}

//! True when a config carries a design grid ("designs" and/or "c_values").
inline bool has_design_grid(const json& j)
{
    return j.is_object() && (j.contains("designs") || j.contains("c_values"));
}

/*!
 * Design grid of a sweep config: every entry of "designs", then one
 * SubsampledNested cell per entry of "c_values".
 */
inline std::vector<DesignSpec> design_grid_from_json(const json& j, const std::string& where = "sweep")
{
    std::vector<DesignSpec> cells;
    if (j.contains("designs"))
    {
        const auto& list = j.at("designs");
        if (!list.is_array())
            throw ConfigError(where + ".designs: expected an array");
        for (std::size_t i = 0; i < list.size(); ++i)
            cells.push_back(design_from_json(list[i], where + ".designs[" + std::to_string(i) + "]"));
    }
    if (j.contains("c_values"))
    {
        for (double c : detail::require_numbers(j, "c_values", where))
        {
            DesignSpec d{SubsampledNested{c}};
            detail::validate_as_config([&] { d.validate(); }, where + ".c_values");
            cells.push_back(d);
        }
    }
    if (cells.empty())
        throw ConfigError(where + ": design grid is empty");
    return cells;
}

inline json to_json(const std::vector<DesignSpec>& cells)
{
    json out = json::array();
    for (const auto& d : cells)
        out.push_back(to_json(d, true));
    return out;
}

} // namespace transport
