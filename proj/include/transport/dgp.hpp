#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "transport/detail/math.hpp"
#include "transport/domain.hpp"
#include "transport/errors.hpp"
#include "transport/rng.hpp"

namespace transport {

//---------------------------------------------------------------------------//
// Covariate distributions
//---------------------------------------------------------------------------//

struct NormalDist
{
    double mean = 0.0;
    double sd = 1.0;
};

struct BernoulliDist
{
    double p = 0.5;
};

struct UniformDist
{
    double lo = 0.0;
    double hi = 1.0;
};

using CovariateDist = std::variant<NormalDist, BernoulliDist, UniformDist>;

inline double expectation(const CovariateDist& dist)
{
    return std::visit(
        [](const auto& d) -> double {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, NormalDist>)
                return d.mean;
            else if constexpr (std::is_same_v<T, BernoulliDist>)
                return d.p;
            else
                return 0.5 * (d.lo + d.hi);
        },
        dist);
}

inline double draw(const CovariateDist& dist, Xoshiro256& rng)
{
    return std::visit(
        [&](const auto& d) -> double {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, NormalDist>)
                return std::normal_distribution<double>(d.mean, d.sd)(rng);
            else if constexpr (std::is_same_v<T, BernoulliDist>)
                return rng.uniform() < d.p ? 1.0 : 0.0;
            else
                return d.lo + (d.hi - d.lo) * rng.uniform();
        },
        dist);
}

//! Inverse CDF; u must lie strictly inside (0, 1).
inline double quantile(const CovariateDist& dist, double u)
{
    return std::visit(
        [&](const auto& d) -> double {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, NormalDist>)
                return boost::math::quantile(boost::math::normal(d.mean, d.sd), u);
            else if constexpr (std::is_same_v<T, BernoulliDist>)
                return u < 1.0 - d.p ? 0.0 : 1.0;
            else
                return d.lo + (d.hi - d.lo) * u;
        },
        dist);
}

//---------------------------------------------------------------------------//
// Data-generating process
//---------------------------------------------------------------------------//

/*!
 * Parametric superpopulation.
 *
 * Participation is logistic in X, so 0 < Pr[S=1|X=x] < 1 for every finite x.
 * Treatment in the trial is Bernoulli(treatment_prob) independent of X.
 * Potential outcomes are linear in X plus independent Normal(0, noise_sd)
 * errors drawn without reference to S, so exchangeability over S holds.
 */
struct DgpSpec
{
    std::vector<CovariateDist> covariates;
    std::vector<double> participation_logit; //!< (g0, g1..gp)
    double treatment_prob = 0.5;             //!< Pr[A=1 | X, S=1]
    std::vector<double> outcome_mean_a0;     //!< (intercept, slopes) for arm 0
    std::vector<double> outcome_mean_a1;
    double noise_sd = 1.0;
    std::uint64_t seed = 0;

    std::size_t dimension() const noexcept { return covariates.size(); }

    double participation_probability(std::span<const double> x) const
    {
        return detail::logistic(participation_logit[0]
                                + detail::dot(std::span(participation_logit).subspan(1), x));
    }

    const std::vector<double>& outcome_coefficients(int a) const
    {
        return a == 1 ? outcome_mean_a1 : outcome_mean_a0;
    }

    double outcome_mean(int a, std::span<const double> x) const
    {
        const auto& coef = outcome_coefficients(a);
        return coef[0] + detail::dot(std::span(coef).subspan(1), x);
    }

    void validate() const
    {
        const std::size_t p = dimension();
        if (participation_logit.size() != p + 1)
            throw InvalidArgument("participation_logit needs p + 1 coefficients");
        if (outcome_mean_a0.size() != p + 1 || outcome_mean_a1.size() != p + 1)
            throw InvalidArgument("outcome mean forms need p + 1 coefficients");
        if (!detail::all_finite(participation_logit) || !detail::all_finite(outcome_mean_a0)
            || !detail::all_finite(outcome_mean_a1))
            throw InvalidArgument("DGP coefficients must be finite");
        if (!(treatment_prob > 0.0 && treatment_prob < 1.0))
            throw InvalidArgument("treatment_prob must lie in (0, 1)");
        if (!(std::isfinite(noise_sd) && noise_sd >= 0.0))
            throw InvalidArgument("noise_sd must be finite and non-negative");
        for (const auto& dist : covariates)
        {
            std::visit(
                [](const auto& d) {
                    using T = std::decay_t<decltype(d)>;
                    if constexpr (std::is_same_v<T, NormalDist>)
                    {
                        if (!std::isfinite(d.mean) || !(std::isfinite(d.sd) && d.sd > 0.0))
                            throw InvalidArgument("normal covariate needs finite mean and sd > 0");
                    }
                    else if constexpr (std::is_same_v<T, BernoulliDist>)
                    {
                        if (!(d.p >= 0.0 && d.p <= 1.0))
                            throw InvalidArgument("bernoulli covariate needs p in [0, 1]");
                    }
                    else
                    {
                        if (!(std::isfinite(d.lo) && std::isfinite(d.hi) && d.lo < d.hi))
                            throw InvalidArgument("uniform covariate needs finite lo < hi");
                    }
                },
                dist);
        }
    }
};

//! X ~ N(0,1); logit Pr[S=1|X] = -1 + 0.5X; e = 0.5; m0 = 1 + X; m1 = 2 + 1.3X; sd 1.
inline DgpSpec dgp1(std::uint64_t seed = 1)
{
    DgpSpec dgp;
    dgp.covariates = {NormalDist{0.0, 1.0}};
    dgp.participation_logit = {-1.0, 0.5};
    dgp.treatment_prob = 0.5;
    dgp.outcome_mean_a0 = {1.0, 1.0};
    dgp.outcome_mean_a1 = {2.0, 1.3};
    dgp.noise_sd = 1.0;
    dgp.seed = seed;
    return dgp;
}

//! Simulator-only perturbations used to stress the identifiability conditions.
struct SimulationOptions
{
    //! Additive shift of both potential outcomes for non-participants
    //! (a direct S -> Y effect that breaks mean generalizability).
    double nonparticipant_shift = 0.0;
};

namespace detail {

inline TruthRecord draw_unit(const DgpSpec& dgp, Xoshiro256& rng, const SimulationOptions& opts)
{
    TruthRecord unit;
    unit.x.resize(dgp.dimension());
    for (std::size_t j = 0; j < dgp.dimension(); ++j)
        unit.x[j] = transport::draw(dgp.covariates[j], rng);

    unit.s = rng.uniform() < dgp.participation_probability(unit.x) ? 1 : 0;
    const int arm = rng.uniform() < dgp.treatment_prob ? 1 : 0;

    std::normal_distribution<double> noise(0.0, 1.0);
    const double e0 = noise(rng);
    noise.reset();
    const double e1 = noise(rng);
    const double shift = unit.s == 0 ? opts.nonparticipant_shift : 0.0;
    unit.y0 = dgp.outcome_mean(0, unit.x) + dgp.noise_sd * e0 + shift;
    unit.y1 = dgp.outcome_mean(1, unit.x) + dgp.noise_sd * e1 + shift;
    if (unit.s == 1)
    {
        unit.a = arm;
        unit.y = unit.potential(arm);
    }
    unit.d = 1;
    return unit;
}

} // namespace detail

/*!
 * Draw an actual population of n i.i.d. units.
 *
 * Unit i uses its own generator seeded by item_seed(seed, population, i),
 * so the result does not depend on how the work is scheduled.
 */
inline std::vector<TruthRecord>
simulate_actual_population(const DgpSpec& dgp, std::size_t n, const SimulationOptions& opts = {})
{
    if (n == 0)
        throw InvalidArgument("population size must be positive");
    dgp.validate();
    if (!std::isfinite(opts.nonparticipant_shift))
        throw InvalidArgument("nonparticipant_shift must be finite");

    std::vector<TruthRecord> population;
    population.reserve(n);
    const std::uint64_t base = stream_seed(dgp.seed, Stream::population);
    for (std::size_t i = 0; i < n; ++i)
    {
        Xoshiro256 rng(mix_seed(base, i));
        population.push_back(detail::draw_unit(dgp, rng, opts));
    }
    return population;
}

//---------------------------------------------------------------------------//
// Oracle
//---------------------------------------------------------------------------//

//! Per-arm potential outcome means with Monte Carlo standard errors.
struct ArmMeans
{
    std::array<double, 2> value{};
    std::array<double, 2> se{};
};

struct OracleTruth
{
    ArmMeans mean_target;        //!< E[Y^a]
    ArmMeans mean_nonrandomized; //!< E[Y^a | S=0]
    ArmMeans mean_randomized;    //!< E[Y^a | S=1]
    double pr_s1 = 0.0;
    double pr_s1_se = 0.0;
    std::size_t mc_sample_size = 0;

    //! Plain Monte Carlo averages of simulated (y0, y1) overall and by S.
    struct Crude
    {
        ArmMeans mean_target;
        ArmMeans mean_nonrandomized;
        ArmMeans mean_randomized;
        double pr_s1 = 0.0;
        double pr_s1_se = 0.0;
    } crude;

    //! E[Y^a] = a0 + a'E[X] (+ shift * Pr[S=0]), from the linear outcome model.
    std::array<double, 2> closed_form_target{};
};

/*!
 * Brute-force truth for every estimand.
 *
 * The reported values use m Latin-hypercube draws of X with exact
 * conditional means E[Y^a | X] and Pr[S=1 | X] averaged over them; the
 * crude block repeats the computation with m simulated units (including
 * S and outcome noise) from an independent stream. Both use streams
 * derived from oracle_seed, disjoint from the population stream.
 */
inline OracleTruth oracle_truth(const DgpSpec& dgp,
                                std::size_t m,
                                std::uint64_t oracle_seed,
                                const SimulationOptions& opts = {})
{
    if (m < 2)
        throw InvalidArgument("oracle sample size too small");
    dgp.validate();
    const std::size_t p = dgp.dimension();
    const double shift = opts.nonparticipant_shift;

    OracleTruth truth;
    truth.mc_sample_size = m;

    // Stratified draws: coordinate j uses strata perm_j(i), j = 0 unpermuted.
    Xoshiro256 rng(stream_seed(oracle_seed, Stream::oracle));
    std::vector<std::vector<std::uint32_t>> perm(p > 1 ? p - 1 : 0);
    for (auto& pj : perm)
    {
        pj.resize(m);
        std::iota(pj.begin(), pj.end(), 0U);
        std::shuffle(pj.begin(), pj.end(), rng);
    }

    const double inv_m = 1.0 / static_cast<double>(m);
    detail::Moments prob;
    std::array<detail::Moments, 2> target;
    // E[S mu]/E[S] and E[(1-S) mu]/E[1-S] with S replaced by Pr[S=1|X].
    std::array<detail::RatioMoments, 2> ratio_r, ratio_n;
    std::vector<double> x(p);
    for (std::size_t i = 0; i < m; ++i)
    {
        for (std::size_t j = 0; j < p; ++j)
        {
            const std::size_t stratum = j == 0 ? i : perm[j - 1][i];
            const double jitter = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
            x[j] = quantile(dgp.covariates[j], (static_cast<double>(stratum) + jitter) * inv_m);
        }
        const double pr = dgp.participation_probability(x);
        prob.add(pr);
        for (int a = 0; a < 2; ++a)
        {
            const double mu = dgp.outcome_mean(a, x);
            target[a].add(mu + (1.0 - pr) * shift);
            ratio_r[a].add(pr * mu, pr);
            ratio_n[a].add((1.0 - pr) * mu, 1.0 - pr);
        }
    }

    truth.pr_s1 = prob.mean;
    truth.pr_s1_se = prob.se();
    for (int a = 0; a < 2; ++a)
    {
        truth.mean_target.value[a] = target[a].mean;
        truth.mean_target.se[a] = target[a].se();
        truth.mean_randomized.value[a] = ratio_r[a].ratio();
        truth.mean_randomized.se[a] = ratio_r[a].se();
        truth.mean_nonrandomized.value[a] = ratio_n[a].ratio() + shift;
        truth.mean_nonrandomized.se[a] = ratio_n[a].se();

        const auto& coef = dgp.outcome_coefficients(a);
        double cf = coef[0];
        for (std::size_t j = 0; j < p; ++j)
            cf += coef[j + 1] * expectation(dgp.covariates[j]);
        truth.closed_form_target[a] = cf + shift * (1.0 - truth.pr_s1);
    }

    // Crude cross-check from simulated units.
    Xoshiro256 crude_rng(stream_seed(oracle_seed, Stream::oracle_crude));
    detail::Moments s_frac;
    std::array<detail::Moments, 2> all, in_s1, in_s0;
    for (std::size_t i = 0; i < m; ++i)
    {
        const TruthRecord unit = detail::draw_unit(dgp, crude_rng, opts);
        s_frac.add(unit.s);
        for (int a = 0; a < 2; ++a)
        {
            all[a].add(unit.potential(a));
            (unit.s == 1 ? in_s1 : in_s0)[a].add(unit.potential(a));
        }
    }
    truth.crude.pr_s1 = s_frac.mean;
    truth.crude.pr_s1_se = s_frac.se();
    for (int a = 0; a < 2; ++a)
    {
        truth.crude.mean_target.value[a] = all[a].mean;
        truth.crude.mean_target.se[a] = all[a].se();
        truth.crude.mean_randomized.value[a] = in_s1[a].mean;
        truth.crude.mean_randomized.se[a] = in_s1[a].se();
        truth.crude.mean_nonrandomized.value[a] = in_s0[a].mean;
        truth.crude.mean_nonrandomized.se[a] = in_s0[a].se();
    }
    return truth;
}

} // namespace transport
