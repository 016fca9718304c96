#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "transport/transport.hpp"

namespace fixtures {

using namespace transport;

//! Trial rows (x, a, y) followed by external rows (x) in one dimension.
struct Rows
{
    std::vector<TrialParticipant> trial;
    std::vector<CovariateVector> external;
};

inline ObservedDataset make_dataset(const Rows& rows,
                                    DesignSpec design,
                                    std::optional<std::uint64_t> unsampled = std::nullopt,
                                    std::size_t k = 0)
{
    std::vector<ObservedRecord> records;
    std::size_t p = 0;
    for (const auto& t : rows.trial)
    {
        records.emplace_back(t);
        p = t.x.size();
    }
    for (const auto& x : rows.external)
        records.emplace_back(SampledNonRandomized{x});
    if (design.is_nested() && !unsampled)
        unsampled = 0;
    return ObservedDataset(std::move(records), std::move(design), p, k, TreatmentProbability{},
                           design.is_nested() ? unsampled : std::nullopt);
}

//! n_trial trial rows (alternating arms, x = 0, y = 0) and n_external external rows.
inline ObservedDataset counts_dataset(std::size_t n_trial,
                                      std::size_t n_external,
                                      DesignSpec design,
                                      std::optional<std::uint64_t> unsampled = std::nullopt)
{
    Rows rows;
    for (std::size_t i = 0; i < n_trial; ++i)
        rows.trial.push_back({{0.0}, static_cast<int>(i % 2), 0.0});
    for (std::size_t i = 0; i < n_external; ++i)
        rows.external.push_back({0.0});
    return make_dataset(rows, std::move(design), unsampled);
}

inline DesignSpec covariate_design()
{
    return SubsampledNestedCovariate{SamplingTable{0, {0.0}, {0.2, 0.8}}};
}

//! DGP-1 simulated and sampled under a design.
inline ObservedDataset dgp1_dataset(std::size_t n, const DesignSpec& design, std::uint64_t seed)
{
    const auto dgp = dgp1(seed);
    const auto pop = simulate_actual_population(dgp, n);
    return apply_design(pop, design, seed);
}

} // namespace fixtures
