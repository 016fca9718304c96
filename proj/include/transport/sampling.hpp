#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "transport/domain.hpp"
#include "transport/errors.hpp"
#include "transport/rng.hpp"

namespace transport {

//! Dataset metadata that is not a function of the design.
struct DatasetMeta
{
    std::optional<std::size_t> aux_split; //!< k; defaults to the c_table coordinate + 1, else 0
    TreatmentProbability treatment_prob;
};

namespace detail {

//! Pr[D=1 | S=0, X] as the simulator sees it (u unsealed for non-nested).
inline double simulator_sampling_probability(const DesignSpec& design, std::span<const double> x)
{
    if (const auto* nn = std::get_if<NonNested>(&design.variant))
    {
        const auto u = SimulatorAccess::hidden_fraction(*nn);
        if (!u)
            throw InvalidArgument("non-nested design needs the simulator-side sampling fraction u");
        return *u;
    }
    return design.sampling_probability(x);
}

inline std::size_t default_aux_split(const DesignSpec& design)
{
    if (const auto* cv = std::get_if<SubsampledNestedCovariate>(&design.variant))
        return cv->c_table.coordinate + 1;
    return 0;
}

} // namespace detail

/*!
 * Sampling indicator D for every unit of the population.
 *
 * D = 1 for every trial participant. A non-participant is kept by an
 * independent Bernoulli draw whose probability is 1, c, c(X1) or u
 * depending on the design; unit i draws from item_seed(seed, sampling, i).
 */
inline std::vector<int> sampling_indicators(const std::vector<TruthRecord>& population,
                                            const DesignSpec& design,
                                            std::uint64_t seed)
{
    design.validate();
    std::vector<int> d(population.size(), 1);
    const std::uint64_t base = stream_seed(seed, Stream::sampling);
    for (std::size_t i = 0; i < population.size(); ++i)
    {
        if (population[i].s == 1)
            continue;
        const double keep = detail::simulator_sampling_probability(design, population[i].x);
        if (!(keep > 0.0 && keep <= 1.0))
            throw InvalidArgument("sampling probability must lie in (0, 1]");
        Xoshiro256 rng(mix_seed(base, i));
        d[i] = rng.uniform() < keep ? 1 : 0;
    }
    return d;
}

/*!
 * Apply a study design to an actual population.
 *
 * Trial participants become TrialParticipant records; kept non-participants
 * become SampledNonRandomized with treatment and outcome stripped. Nested
 * designs record how many non-participants were dropped; non-nested
 * datasets do not, and carry a redacted design.
 */
inline ObservedDataset apply_design(const std::vector<TruthRecord>& population,
                                    const DesignSpec& design,
                                    std::uint64_t seed,
                                    const DatasetMeta& meta = {})
{
    if (population.empty())
        throw InvalidArgument("population is empty");
    const bool any_trial = std::any_of(population.begin(), population.end(),
                                       [](const TruthRecord& r) { return r.s == 1; });
    if (!any_trial)
        throw InvalidArgument("population has no trial participants");

    const std::vector<int> d = sampling_indicators(population, design, seed);
    std::vector<ObservedRecord> records;
    records.reserve(population.size());
    std::uint64_t dropped = 0;
    for (std::size_t i = 0; i < population.size(); ++i)
    {
        const auto& unit = population[i];
        if (unit.s == 1)
        {
            if (!unit.a || !unit.y)
                throw InvalidArgument("trial participant without treatment or outcome");
            records.emplace_back(TrialParticipant{unit.x, *unit.a, *unit.y});
        }
        else if (d[i] == 1)
        {
            records.emplace_back(SampledNonRandomized{unit.x});
        }
        else
        {
            ++dropped;
        }
    }

    std::optional<std::uint64_t> n_unsampled;
    if (design.is_nested())
        n_unsampled = dropped;
    const std::size_t p = population.front().x.size();
    return ObservedDataset(std::move(records), design.redacted(), p,
                           meta.aux_split.value_or(detail::default_aux_split(design)),
                           meta.treatment_prob, n_unsampled);
}

//---------------------------------------------------------------------------//
// Sampling-property check
//---------------------------------------------------------------------------//

struct StratumCheck
{
    std::string label;
    std::size_t n = 0;
    std::size_t kept = 0;
    double expected = 0.0; //!< design sampling probability in this stratum
    double fraction = 0.0;
    double se = 0.0;       //!< binomial standard error at the expected value
    bool pass = false;
};

struct IndependenceReport
{
    std::vector<StratumCheck> strata;
    bool passed = true;
};

/*!
 * Empirical check that D is independent of (X, Y) given S = 0.
 *
 * Non-participants are stratified by the quartiles of each covariate and by
 * the sign of each potential outcome; under covariate-dependent sampling
 * every stratum is further split by the bin of c(X1). Each stratum's kept
 * fraction must lie within z binomial standard errors of its design value.
 */
inline IndependenceReport sampling_indicator_independence_check(
    const std::vector<TruthRecord>& population,
    const DesignSpec& design,
    std::uint64_t seed,
    double z = 4.0)
{
    const std::vector<int> d = sampling_indicators(population, design, seed);

    std::vector<std::size_t> nonparticipants;
    for (std::size_t i = 0; i < population.size(); ++i)
        if (population[i].s == 0)
            nonparticipants.push_back(i);

    const auto* cv = std::get_if<SubsampledNestedCovariate>(&design.variant);
    auto bin_of = [&](const TruthRecord& r) -> std::size_t { return cv ? cv->c_table.bin(r.x) : 0; };

    // (label, bin) -> (n, kept, expected)
    std::map<std::pair<std::string, std::size_t>, StratumCheck> cells;
    auto tally = [&](const std::string& label, std::size_t idx) {
        const auto& unit = population[idx];
        auto& cell = cells[{label, bin_of(unit)}];
        cell.expected = detail::simulator_sampling_probability(design, unit.x);
        ++cell.n;
        cell.kept += static_cast<std::size_t>(d[idx]);
    };

    const std::size_t p = population.empty() ? 0 : population.front().x.size();
    for (std::size_t j = 0; j < p; ++j)
    {
        std::vector<double> values;
        values.reserve(nonparticipants.size());
        for (std::size_t idx : nonparticipants)
            values.push_back(population[idx].x[j]);
        if (values.empty())
            break;
        std::sort(values.begin(), values.end());
        std::array<double, 3> cuts{};
        for (std::size_t q = 0; q < 3; ++q)
            cuts[q] = values[(q + 1) * values.size() / 4];
        for (std::size_t idx : nonparticipants)
        {
            const double v = population[idx].x[j];
            const auto quartile = std::lower_bound(cuts.begin(), cuts.end(), v) - cuts.begin();
            tally("x" + std::to_string(j + 1) + "_q" + std::to_string(quartile + 1), idx);
        }
    }
    for (std::size_t idx : nonparticipants)
    {
        tally(population[idx].y0 >= 0 ? "y0_nonneg" : "y0_neg", idx);
        tally(population[idx].y1 >= 0 ? "y1_nonneg" : "y1_neg", idx);
    }

    IndependenceReport report;
    for (auto& [key, cell] : cells)
    {
        cell.label = cv ? key.first + "_cbin" + std::to_string(key.second) : key.first;
        cell.fraction = static_cast<double>(cell.kept) / static_cast<double>(cell.n);
        cell.se = std::sqrt(cell.expected * (1.0 - cell.expected) / static_cast<double>(cell.n));
        cell.pass = cell.se == 0.0 ? cell.fraction == cell.expected
                                   : std::abs(cell.fraction - cell.expected) <= z * cell.se;
        report.passed = report.passed && cell.pass;
        report.strata.push_back(cell);
    }
    return report;
}

} // namespace transport
