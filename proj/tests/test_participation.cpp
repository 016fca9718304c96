#include <cmath>

#include <catch_amalgamated.hpp>

#include "fixtures.hpp"

using namespace transport;
using fixtures::counts_dataset;

namespace {

ParticipationFitOptions intercept_only()
{
    ParticipationFitOptions o;
    o.columns = std::vector<std::size_t>{};
    return o;
}

DgpSpec three_covariate_dgp(std::uint64_t seed)
{
    DgpSpec dgp;
    dgp.covariates = {NormalDist{0.0, 1.0}, BernoulliDist{0.4}, UniformDist{-1.0, 1.0}};
    dgp.participation_logit = {-1.0, 0.5, -0.4, 0.8};
    dgp.outcome_mean_a0 = {1.0, 1.0, 0.0, 0.5};
    dgp.outcome_mean_a1 = {2.0, 1.3, 0.2, 0.5};
    dgp.seed = seed;
    return dgp;
}

// Weighted log pseudo-likelihood written out directly, normalized by n.
double direct_objective(const ObservedDataset& data, const std::vector<double>& g)
{
    double acc = 0.0;
    for (const auto& rec : data.records())
    {
        const auto& x = covariates(rec);
        double eta = g[0];
        for (std::size_t j = 0; j < x.size(); ++j)
            eta += g[j + 1] * x[j];
        const double p = 1.0 / (1.0 + std::exp(-eta));
        if (is_trial(rec))
            acc += std::log(p);
        else
            acc += std::log(1.0 - p) / data.design().sampling_probability(x);
    }
    return acc / static_cast<double>(data.size());
}

} // namespace

TEST_CASE("intercept-only fit equals the log-odds of the sample proportion")
{
    const auto data = counts_dataset(3, 2, CensusNested{});
    const auto model = fit_participation(data, intercept_only());
    CHECK(model.coefficients.size() == 1);
    CHECK(model.coefficients[0] == Catch::Approx(std::log(1.5)).epsilon(1e-12));
    CHECK(model.scale == ParticipationScale::Population);
    CHECK(model.diagnostics.grad_norm < 1e-8);
}

TEST_CASE("weighted intercept-only fit solves the weighted score equation")
{
    // 3 (1 - p) = (1 / 0.5) * 1 * p  =>  p = 3/5
    const auto data = counts_dataset(3, 1, SubsampledNested{0.5}, 1);
    const auto model = fit_participation(data, intercept_only());
    CHECK(model.coefficients[0] == Catch::Approx(std::log(1.5)).epsilon(1e-12));
}

TEST_CASE("objective matches the pseudo-likelihood written out")
{
    const auto dgp = three_covariate_dgp(3);
    const auto data = apply_design(simulate_actual_population(dgp, 3000), SubsampledNested{0.3}, 3);
    const auto obj = participation_objective(data);
    const std::vector<double> g{-0.3, 0.2, 0.1, -0.5};
    const Eigen::Map<const Eigen::VectorXd> gv(g.data(), 4);
    CHECK(obj.value(gv) == Catch::Approx(direct_objective(data, g)).epsilon(1e-12));
}

TEST_CASE("analytic gradient matches central differences")
{
    const auto dgp = three_covariate_dgp(5);
    const auto data = apply_design(simulate_actual_population(dgp, 5000), SubsampledNested{0.3}, 5);
    const auto obj = participation_objective(data);
    Xoshiro256 rng(123);
    for (int trial = 0; trial < 10; ++trial)
    {
        Eigen::VectorXd g(4);
        for (int j = 0; j < 4; ++j)
            g[j] = -2.0 + 4.0 * rng.uniform();
        const Eigen::VectorXd analytic = obj.gradient(g);
        Eigen::VectorXd numeric(4);
        const double h = 1e-5;
        for (int j = 0; j < 4; ++j)
        {
            Eigen::VectorXd up = g, down = g;
            up[j] += h;
            down[j] -= h;
            numeric[j] = (obj.value(up) - obj.value(down)) / (2 * h);
        }
        const double rel = (analytic - numeric).lpNorm<Eigen::Infinity>()
                           / analytic.lpNorm<Eigen::Infinity>();
        CHECK(rel < 1e-6);
    }
}

TEST_CASE("information matrix matches differences of the gradient")
{
    const auto data = fixtures::dgp1_dataset(4000, SubsampledNested{0.5}, 9);
    const auto obj = participation_objective(data);
    Eigen::VectorXd g(2);
    g << -0.7, 0.3;
    const auto ev = obj.evaluate(g);
    const double h = 1e-5;
    for (int j = 0; j < 2; ++j)
    {
        Eigen::VectorXd up = g, down = g;
        up[j] += h;
        down[j] -= h;
        const Eigen::VectorXd col = -(obj.gradient(up) - obj.gradient(down)) / (2 * h);
        CHECK((col - ev.information.col(j)).lpNorm<Eigen::Infinity>() < 1e-7);
    }
}

TEST_CASE("marginal participation probability")
{
    SECTION("subsampled")
    {
        const auto data = counts_dataset(200, 300, SubsampledNested{0.25}, 900);
        const double p = marginal_participation_probability(data);
        CHECK(p == Catch::Approx(1.0 / 7.0).epsilon(1e-15));
        CHECK(std::abs(p - 200.0 / (200.0 + 300.0 / 0.25)) < 1e-15);
    }
    SECTION("census")
    {
        const auto data = counts_dataset(200, 1200, CensusNested{});
        CHECK(marginal_participation_probability(data) == Catch::Approx(1.0 / 7.0).epsilon(1e-15));
    }
    SECTION("covariate design counts each external row 1/c(X1)")
    {
        fixtures::Rows rows;
        rows.trial = {{{1.0}, 0, 0.0}, {{1.0}, 1, 0.0}};
        rows.external = {{-1.0}, {1.0}};
        const auto data = fixtures::make_dataset(rows, fixtures::covariate_design(), 0, 1);
        // external weight 1/0.2 + 1/0.8 = 6.25
        CHECK(marginal_participation_probability(data) == Catch::Approx(2.0 / 8.25));
    }
    SECTION("non-nested")
    {
        const auto data = counts_dataset(200, 300, NonNested{});
        CHECK_THROWS_AS(marginal_participation_probability(data), NotIdentifiable);
    }
}

TEST_CASE("participation probability and odds")
{
    ParticipationModel zero;
    zero.coefficients = {0.0, 0.0};
    zero.columns = {0};
    for (double x : {-3.0, 0.0, 2.5})
    {
        const std::vector<double> xv{x};
        CHECK(participation_probability(zero, CensusNested{}, xv) == 0.5);
        CHECK(participation_odds_up_to_constant(zero, xv) == 1.0);
    }

    ParticipationModel shifted = zero;
    shifted.scale = ParticipationScale::ShiftedIntercept;
    const std::vector<double> x0{0.0};
    CHECK_THROWS_AS(participation_probability(shifted, NonNested{}, x0), NotIdentifiable);
    CHECK_THROWS_AS(participation_probability(zero, NonNested{}, x0), NotIdentifiable);
    CHECK_THROWS_AS(odds_population(shifted, NonNested{}, x0), NotIdentifiable);
    CHECK_NOTHROW(participation_odds_up_to_constant(shifted, x0));
}

TEST_CASE("intercept shift by ln 10 scales the odds by 10")
{
    ParticipationModel m;
    m.coefficients = {-1.0, 0.5, 0.25};
    m.columns = {0, 1};
    ParticipationModel up = m;
    up.coefficients[0] += std::log(10.0);
    for (double a : {-2.0, 0.0, 1.5})
        for (double b : {-1.0, 3.0})
        {
            const std::vector<double> x{a, b};
            const double ratio = participation_odds_up_to_constant(up, x)
                                 / participation_odds_up_to_constant(m, x);
            CHECK(ratio == Catch::Approx(10.0).epsilon(1e-14));
        }
}

TEST_CASE("population odds")
{
    SECTION("census: fitted odds are population odds")
    {
        const auto data = fixtures::dgp1_dataset(20000, CensusNested{}, 4);
        ParticipationFitOptions unweighted;
        unweighted.weighting = Weighting::Unweighted;
        const auto weighted = fit_participation(data);
        const auto plain = fit_participation(data, unweighted);
        CHECK(plain.coefficients == weighted.coefficients);
        const std::vector<double> x{0.7};
        CHECK(odds_population(plain, data.design(), x)
              == participation_odds_up_to_constant(plain, x));
    }
    SECTION("intercept-only population odds reproduce the marginal probability")
    {
        const auto data = fixtures::dgp1_dataset(50000, SubsampledNested{0.3}, 6);
        const auto model = fit_participation(data, intercept_only());
        const double odds = odds_population(model, data.design(), std::vector<double>{0.0});
        CHECK(odds / (1 + odds)
              == Catch::Approx(marginal_participation_probability(data)).epsilon(1e-10));

        ParticipationFitOptions o = intercept_only();
        o.weighting = Weighting::Unweighted;
        const auto sample = fit_participation(data, o);
        CHECK(sample.scale == ParticipationScale::Sample);
        const double odds_c = odds_population(sample, data.design(), std::vector<double>{0.0});
        CHECK(odds_c / (1 + odds_c)
              == Catch::Approx(marginal_participation_probability(data)).epsilon(1e-10));
    }
}

TEST_CASE("weighted and corrected unweighted fits agree on subsampled data", "[slow]")
{
    const auto data = fixtures::dgp1_dataset(1'000'000, SubsampledNested{0.3}, 8);
    const auto weighted = fit_participation(data);
    ParticipationFitOptions o;
    o.weighting = Weighting::Unweighted;
    const auto sample = fit_participation(data, o);
    CHECK(weighted.scale == ParticipationScale::Population);
    for (double xv : {-2.0, -1.0, 0.0, 1.0, 2.0})
    {
        const std::vector<double> x{xv};
        const double a = odds_population(weighted, data.design(), x);
        const double b = odds_population(sample, data.design(), x);
        CHECK(std::abs(a / b - 1.0) < 1e-2);
        CHECK(participation_probability(sample, data.design(), x)
              == Catch::Approx(participation_probability(weighted, data.design(), x))
                     .epsilon(1e-2));
    }
    const double p0 = participation_probability(weighted, data.design(), std::vector<double>{0.0});
    CHECK(p0 == Catch::Approx(1.0 / (1.0 + std::exp(1.0))).margin(0.005));
}

TEST_CASE("covariate-dependent weights target the population model")
{
    const auto data = fixtures::dgp1_dataset(300'000, fixtures::covariate_design(), 10);
    const auto weighted = fit_participation(data);
    CHECK(weighted.scale == ParticipationScale::Population);
    CHECK(weighted.coefficients[0] == Catch::Approx(-1.0).margin(0.03));
    CHECK(weighted.coefficients[1] == Catch::Approx(0.5).margin(0.03));
    ParticipationFitOptions o;
    o.weighting = Weighting::Unweighted;
    const auto sample = fit_participation(data, o);
    CHECK(sample.scale == ParticipationScale::Sample);
}

TEST_CASE("non-nested fit estimates the shifted intercept")
{
    const auto data = fixtures::dgp1_dataset(400'000, NonNested{0.1}, 12);
    const auto model = fit_participation(data);
    CHECK(model.scale == ParticipationScale::ShiftedIntercept);
    CHECK(model.coefficients[1] == Catch::Approx(0.5).margin(0.03));
    CHECK(model.coefficients[0] == Catch::Approx(-1.0 - std::log(0.1)).margin(0.05));
    const double odds0 = participation_odds_up_to_constant(model, std::vector<double>{0.0});
    CHECK(odds0 == Catch::Approx(std::exp(-1.0) / 0.1).epsilon(0.05));
}

TEST_CASE("fit failures are reported")
{
    SECTION("separation")
    {
        fixtures::Rows rows;
        for (int i = 0; i < 10; ++i)
        {
            rows.trial.push_back({{0.01 * (1 + i)}, i % 2, 0.0});
            rows.external.push_back({-0.01 * (1 + i)});
        }
        const auto data = fixtures::make_dataset(rows, CensusNested{});
        CHECK_THROWS_AS(fit_participation(data), SeparationDetected);
    }
    SECTION("collinear columns")
    {
        fixtures::Rows rows;
        Xoshiro256 rng(1);
        for (int i = 0; i < 40; ++i)
        {
            const double v = rng.uniform();
            if (i % 3 == 0)
                rows.external.push_back({v, 2 * v});
            else
                rows.trial.push_back({{v, 2 * v}, i % 2, 0.0});
        }
        const auto data = fixtures::make_dataset(rows, CensusNested{});
        CHECK_THROWS_AS(fit_participation(data), RankDeficient);
    }
    SECTION("iteration limit")
    {
        const auto data = fixtures::dgp1_dataset(2000, CensusNested{}, 2);
        ParticipationFitOptions o;
        o.max_iterations = 1;
        o.gradient_tolerance = 1e-15;
        try
        {
            fit_participation(data, o);
            FAIL("expected NonConvergence");
        }
        catch (const NonConvergence& e)
        {
            CHECK(e.grad_norm() > 0.0);
        }
    }
    SECTION("missing strata")
    {
        const auto data = counts_dataset(4, 0, CensusNested{});
        CHECK_THROWS_AS(fit_participation(data), InsufficientData);
    }
}
