#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "transport/domain.hpp"
#include "transport/errors.hpp"
#include "transport/outcome.hpp"
#include "transport/participation.hpp"

namespace transport {

enum class Population
{
    Target,        //!< E[Y^a]
    NonRandomized, //!< E[Y^a | S=0]
    Randomized,    //!< E[Y^a | S=1]
};

enum class Method
{
    GFormula,
    IpwHT,
    IpwHajek,
    TrialMean,
};

inline std::string_view to_string(Population p)
{
    switch (p)
    {
        case Population::Target: return "target";
        case Population::NonRandomized: return "nonrandomized";
        case Population::Randomized: return "randomized";
    }
    return "?";
}

inline std::string_view to_string(Method m)
{
    switch (m)
    {
        case Method::GFormula: return "gformula";
        case Method::IpwHT: return "ipw_ht";
        case Method::IpwHajek: return "ipw_hajek";
        case Method::TrialMean: return "trial_mean";
    }
    return "?";
}

struct WeightDiagnostics
{
    double max_normalized_weight = 0.0; //!< max_i w_i / sum_j w_j
    double ess = 0.0;                   //!< (sum w)^2 / sum w^2
};

struct EstimateReport
{
    int arm = 1;
    Population population = Population::Target;
    Method method = Method::GFormula;
    std::optional<double> value; //!< absent when not identifiable
    WeightDiagnostics weights;
    bool identifiable = true;
    std::optional<double> weight_cap;
    std::vector<std::string> warnings;
};

inline EstimateReport not_identifiable_report(int arm, Population population, Method method)
{
    EstimateReport r;
    r.arm = arm;
    r.population = population;
    r.method = method;
    r.identifiable = false;
    return r;
}

struct IpwOptions
{
    //! Cap inverse-probability weights at this empirical quantile (off when empty).
    std::optional<double> truncate_quantile;
    //! Warn when one row carries more than this share of the total weight.
    double extreme_weight_threshold = 0.1;
};

//---------------------------------------------------------------------------//
// Standardization weights
//---------------------------------------------------------------------------//

/*!
 * Per-record weights standardizing to the target population: 1 for trial
 * rows and 1 / Pr[D=1|S=0,X] for sampled external rows. Their sum
 * estimates the actual population size.
 */
inline std::vector<double> target_weights(const ObservedDataset& data)
{
    require_identified(data.design(), Estimand::MeanTarget);
    std::vector<double> w;
    w.reserve(data.size());
    for (const auto& rec : data.records())
        w.push_back(is_trial(rec) ? 1.0 : 1.0 / data.design().sampling_probability(covariates(rec)));
    return w;
}

/*!
 * 0 on trial rows; on external rows 1 / Pr[D=1|S=0,X] for nested designs
 * and 1 for non-nested ones, where sampling does not depend on X.
 */
inline std::vector<double> nonrandomized_weights(const ObservedDataset& data)
{
    const auto& design = data.design();
    std::vector<double> w;
    w.reserve(data.size());
    for (const auto& rec : data.records())
    {
        if (is_trial(rec))
            w.push_back(0.0);
        else
            w.push_back(design.is_nested() ? 1.0 / design.sampling_probability(covariates(rec)) : 1.0);
    }
    return w;
}

inline WeightDiagnostics weight_diagnostics(std::span<const double> w)
{
    double sum = 0.0, sum_sq = 0.0, max = 0.0;
    for (double v : w)
    {
        sum += v;
        sum_sq += v * v;
        max = std::max(max, v);
    }
    if (sum <= 0.0)
        return {};
    return {max / sum, sum * sum / sum_sq};
}

namespace detail {

inline void check_arm(int arm)
{
    if (arm != 0 && arm != 1)
        throw InvalidArgument("arm must be 0 or 1");
}

//! Sum_i w_i g(x_i) / Sum_i w_i over all records.
inline EstimateReport standardize(const ObservedDataset& data,
                                  const OutcomeModel& model,
                                  int arm,
                                  std::span<const double> w,
                                  Population population)
{
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i)
    {
        if (w[i] == 0.0)
            continue;
        num += w[i] * predict(model, arm, covariates(data.records()[i]));
        den += w[i];
    }
    if (!(den > 0.0))
        throw InsufficientData("standardization weights sum to zero");
    EstimateReport r;
    r.arm = arm;
    r.population = population;
    r.method = Method::GFormula;
    r.value = num / den;
    r.weights = weight_diagnostics(w);
    return r;
}

//! Cap weights at their empirical q-quantile; returns the cap.
inline double truncate_weights(std::vector<double>& w, double q)
{
    if (!(q > 0.0 && q <= 1.0))
        throw InvalidArgument("truncation quantile must lie in (0, 1]");
    std::vector<double> sorted = w;
    std::sort(sorted.begin(), sorted.end());
    auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
    idx = std::clamp<std::size_t>(idx, 1, sorted.size()) - 1;
    const double cap = sorted[idx];
    for (double& v : w)
        v = std::min(v, cap);
    return cap;
}

struct ArmRows
{
    std::vector<double> y;
    std::vector<double> w;
};

inline void finish_ipw(EstimateReport& r, ArmRows& rows, const IpwOptions& opts)
{
    if (opts.truncate_quantile)
        r.weight_cap = truncate_weights(rows.w, *opts.truncate_quantile);
    r.weights = weight_diagnostics(rows.w);
    if (r.weights.max_normalized_weight > opts.extreme_weight_threshold)
        r.warnings.push_back("extreme weights: max normalized weight "
                             + std::to_string(r.weights.max_normalized_weight));
}

} // namespace detail

//---------------------------------------------------------------------------//
// g-formula
//---------------------------------------------------------------------------//

//! E[Y^a] as the target-weighted average of the arm-a outcome regression.
inline EstimateReport gformula_mean_target(const ObservedDataset& data,
                                           const OutcomeModel& model,
                                           int arm)
{
    detail::check_arm(arm);
    const auto w = target_weights(data);
    return detail::standardize(data, model, arm, w, Population::Target);
}

//! E[Y^a | S=0] as the design-weighted average outcome regression over external rows.
inline EstimateReport gformula_mean_nonrandomized(const ObservedDataset& data,
                                                  const OutcomeModel& model,
                                                  int arm)
{
    detail::check_arm(arm);
    if (data.external_count() == 0)
        throw NoExternalRows();
    const auto w = nonrandomized_weights(data);
    return detail::standardize(data, model, arm, w, Population::NonRandomized);
}

//! E[Y^a | S=1] as the average outcome regression over trial rows.
inline EstimateReport gformula_mean_randomized(const ObservedDataset& data,
                                               const OutcomeModel& model,
                                               int arm)
{
    detail::check_arm(arm);
    std::vector<double> w;
    w.reserve(data.size());
    for (const auto& rec : data.records())
        w.push_back(is_trial(rec) ? 1.0 : 0.0);
    return detail::standardize(data, model, arm, w, Population::Randomized);
}

//---------------------------------------------------------------------------//
// Inverse probability weighting
//---------------------------------------------------------------------------//

enum class IpwVariant
{
    HorvitzThompson,
    Hajek,
};

/*!
 * E[Y^a] by weighting trial rows in arm a by 1 / (Pr[S=1|X] Pr[A=a|X,S=1]).
 *
 * Horvitz-Thompson divides by the estimated actual-population size (sum of
 * target weights); Hajek divides by the sum of the IP weights.
 */
inline EstimateReport ipw_mean_target(const ObservedDataset& data,
                                      const ParticipationModel& model,
                                      int arm,
                                      IpwVariant variant = IpwVariant::Hajek,
                                      const IpwOptions& opts = {})
{
    detail::check_arm(arm);
    require_identified(data.design(), Estimand::MeanTarget);

    detail::ArmRows rows;
    const double e = data.treatment_prob()(arm);
    for (const auto& rec : data.records())
    {
        const auto* t = std::get_if<TrialParticipant>(&rec);
        if (!t || t->a != arm)
            continue;
        rows.y.push_back(t->y);
        rows.w.push_back(1.0 / (participation_probability(model, data.design(), t->x) * e));
    }

    EstimateReport r;
    r.arm = arm;
    r.population = Population::Target;
    r.method = variant == IpwVariant::Hajek ? Method::IpwHajek : Method::IpwHT;
    detail::finish_ipw(r, rows, opts);

    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < rows.y.size(); ++i)
    {
        num += rows.w[i] * rows.y[i];
        den += rows.w[i];
    }
    if (variant == IpwVariant::HorvitzThompson)
    {
        den = 0.0;
        for (double w : target_weights(data))
            den += w;
    }
    r.value = num / den;
    return r;
}

/*!
 * E[Y^a | S=0] by odds weighting: trial rows in arm a get weight
 * Pr[S=0|X] / (Pr[S=1|X] Pr[A=a|X,S=1]), normalized to sum to one.
 *
 * Any positive constant multiplying the odds cancels in the ratio, so the
 * weights are built from the intercept-free part of the linear predictor.
 * This makes the estimate exactly invariant to intercept shifts, including
 * the unknown -ln u shift of a non-nested fit.
 */
inline EstimateReport ipw_mean_nonrandomized(const ObservedDataset& data,
                                             const ParticipationModel& model,
                                             int arm,
                                             const IpwOptions& opts = {})
{
    detail::check_arm(arm);
    if (data.external_count() == 0)
        throw NoExternalRows();

    detail::ArmRows rows;
    const double e = data.treatment_prob()(arm);
    const bool sample_scale_covariate = model.scale == ParticipationScale::Sample
                                        && !data.design().constant_fraction();
    for (const auto& rec : data.records())
    {
        const auto* t = std::get_if<TrialParticipant>(&rec);
        if (!t || t->a != arm)
            continue;
        double relative_odds = std::exp(model.slope_predictor(t->x));
        if (sample_scale_covariate)
            relative_odds *= data.design().sampling_probability(t->x);
        rows.y.push_back(t->y);
        rows.w.push_back(1.0 / (relative_odds * e));
    }

    EstimateReport r;
    r.arm = arm;
    r.population = Population::NonRandomized;
    r.method = Method::IpwHajek;
    detail::finish_ipw(r, rows, opts);

    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < rows.y.size(); ++i)
    {
        num += rows.w[i] * rows.y[i];
        den += rows.w[i];
    }
    r.value = num / den;
    return r;
}

//---------------------------------------------------------------------------//
// Trial-only
//---------------------------------------------------------------------------//

//! Unweighted mean outcome in trial arm a; estimates E[Y^a | S=1].
inline EstimateReport trial_only_mean(const ObservedDataset& data, int arm)
{
    detail::check_arm(arm);
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& rec : data.records())
    {
        const auto* t = std::get_if<TrialParticipant>(&rec);
        if (t && t->a == arm)
        {
            sum += t->y;
            ++n;
        }
    }
    if (n == 0)
        throw InsufficientData("no trial rows in arm " + std::to_string(arm));
    EstimateReport r;
    r.arm = arm;
    r.population = Population::Randomized;
    r.method = Method::TrialMean;
    r.value = sum / static_cast<double>(n);
    r.weights = {1.0 / static_cast<double>(n), static_cast<double>(n)};
    return r;
}

} // namespace transport
