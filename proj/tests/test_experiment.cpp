#include <cmath>

#include <catch_amalgamated.hpp>

#include "fixtures.hpp"

using namespace transport;

namespace {

ExperimentConfig base_config(const DesignSpec& design, std::size_t n, std::size_t R)
{
    ExperimentConfig cfg;
    cfg.dgp = dgp1();
    cfg.design = design;
    cfg.n = n;
    cfg.replications = R;
    cfg.master_seed = 2024;
    cfg.oracle_m = 1'000'000;
    return cfg;
}

const SummaryRow& row_of(const ExperimentSummary& s, EstimatorId id, int arm)
{
    for (const auto& r : s.rows)
        if (r.estimator == id && r.arm == arm)
            return r;
    throw std::logic_error("row not found");
}

} // namespace

TEST_CASE("replication seeds come from the documented mixer")
{
    CHECK(replication_seed(5, 3) == mix_seed(stream_seed(5, Stream::replication), 3));
    CHECK(replication_seed(5, 3) != replication_seed(5, 4));
    CHECK(replication_seed(5, 3) != replication_seed(6, 3));
}

TEST_CASE("census g-formula is unbiased for the target mean")
{
    auto cfg = base_config(CensusNested{}, 10'000, 500);
    cfg.estimators = {EstimatorId::GFormulaTarget, EstimatorId::TrialOnly};
    const auto s = run_experiment(cfg);
    const auto& g = row_of(s, EstimatorId::GFormulaTarget, 1);
    CHECK(g.estimates == 500);
    CHECK(std::abs(g.bias) < 3 * g.sd / std::sqrt(500.0));
    CHECK(g.bias == g.mean - g.truth);
    CHECK(g.rmse >= g.sd * std::sqrt(499.0 / 500.0) - 1e-12);
    CHECK(s.failures == 0);
}

TEST_CASE("non-nested designs never identify the target mean")
{
    auto cfg = base_config(NonNested{0.2}, 5'000, 20);
    const auto s = run_experiment(cfg);
    for (const auto& r : s.rows)
    {
        if (population_of(r.estimator) == Population::Target)
        {
            CHECK(r.not_identifiable_frac == 1.0);
            CHECK(r.estimates == 0);
            CHECK(std::isnan(r.mean));
        }
        else
            CHECK(r.not_identifiable_frac == 0.0);
    }
}

TEST_CASE("violated generalizability biases the non-randomized mean by -delta")
{
    const double delta = 0.5;
    auto cfg = base_config(CensusNested{}, 10'000, 200);
    cfg.estimators = {EstimatorId::GFormulaNonRandomized, EstimatorId::GFormulaTarget};
    cfg.misspecify.generalizability_violation = delta;
    const auto s = run_experiment(cfg);
    const auto& nr = row_of(s, EstimatorId::GFormulaNonRandomized, 1);
    CHECK(nr.bias < 0);
    CHECK(std::abs(nr.bias + delta) < 4 * nr.sd / std::sqrt(200.0));
    const auto& t = row_of(s, EstimatorId::GFormulaTarget, 1);
    const double expected = -delta * (1 - s.truth.pr_s1);
    CHECK(std::abs(t.bias - expected) < 4 * t.sd / std::sqrt(200.0));
}

TEST_CASE("misspecified outcome model is biased for the non-randomized mean")
{
    auto cfg = base_config(CensusNested{}, 10'000, 100);
    cfg.estimators = {EstimatorId::GFormulaNonRandomized, EstimatorId::IpwNonRandomized};
    cfg.arms = {1};
    cfg.misspecify.outcome = true;
    const auto s = run_experiment(cfg);
    const auto& g = row_of(s, EstimatorId::GFormulaNonRandomized, 1);
    const auto& w = row_of(s, EstimatorId::IpwNonRandomized, 1);
    CHECK(std::abs(g.bias) > 10 * g.sd / std::sqrt(100.0));
    CHECK(std::abs(w.bias) < 4 * w.sd / std::sqrt(100.0));
}

TEST_CASE("results do not depend on the worker count")
{
    auto cfg = base_config(SubsampledNested{0.4}, 3'000, 24);
    cfg.oracle_m = 200'000;
    const auto one = summary_to_csv(run_experiment(cfg, 1));
    const auto four = summary_to_csv(run_experiment(cfg, 4));
    CHECK(one == four);
    CHECK(one.rfind(std::string(summary_csv_header) + "\n", 0) == 0);
}

TEST_CASE("failed replications are tallied, not fatal")
{
    auto cfg = base_config(CensusNested{}, 20, 30);
    cfg.oracle_m = 100'000;
    const auto s = run_experiment(cfg);
    CHECK(s.failures > 0);
    CHECK(s.failures < 30);
    CHECK_FALSE(s.failure_messages.empty());
}

TEST_CASE("bootstrap standard errors")
{
    SECTION("degenerate outcome")
    {
        fixtures::Rows rows;
        for (int i = 0; i < 20; ++i)
            rows.trial.push_back({{0.1 * i}, i % 2, 4.0});
        rows.external = {{0.0}, {1.0}};
        const auto data = fixtures::make_dataset(rows, CensusNested{});
        CHECK(bootstrap_se(data, EstimatorSpec{EstimatorId::TrialOnly, 1}, 100, 1) == 0.0);
    }
    SECTION("needs at least 100 resamples")
    {
        const auto data = fixtures::dgp1_dataset(500, CensusNested{}, 1);
        CHECK_THROWS_AS(bootstrap_se(data, EstimatorSpec{EstimatorId::TrialOnly, 1}, 99, 1),
                        InvalidArgument);
    }
    SECTION("resamples keep the strata sizes and the unsampled tally")
    {
        const auto data = fixtures::dgp1_dataset(3000, SubsampledNested{0.4}, 2);
        const auto b = bootstrap_resample(data, 17);
        CHECK(b.trial_count() == data.trial_count());
        CHECK(b.external_count() == data.external_count());
        CHECK(b.n_unsampled_nonrandomized() == data.n_unsampled_nonrandomized());
    }
    SECTION("doubling B moves the estimate by less than its Monte Carlo noise")
    {
        const auto data = fixtures::dgp1_dataset(10'000, CensusNested{}, 3);
        const EstimatorSpec spec{EstimatorId::GFormulaTarget, 1};
        const double se200 = bootstrap_se(data, spec, 200, 5);
        const double se400 = bootstrap_se(data, spec, 400, 6);
        const double noise = se200 * std::sqrt(1.0 / 400.0 + 1.0 / 800.0);
        CHECK(std::abs(se200 - se400) < 3 * noise);
    }
}

TEST_CASE("bootstrap SE is calibrated against the replication SD", "[slow]")
{
    auto cfg = base_config(CensusNested{}, 10'000, 500);
    cfg.estimators = {EstimatorId::GFormulaTarget};
    cfg.arms = {1};
    cfg.bootstrap = 100;
    const auto s = run_experiment(cfg);
    const auto& r = s.rows.at(0);
    REQUIRE(r.boot_se_mean.has_value());
    CHECK(*r.boot_se_mean == Catch::Approx(r.sd).epsilon(0.3));
}

TEST_CASE("HT and Hajek agree across replications")
{
    auto cfg = base_config(CensusNested{}, 100'000, 200);
    cfg.estimators = {EstimatorId::IpwTargetHT, EstimatorId::IpwTargetHajek};
    cfg.arms = {1};
    detail::Moments diff;
    for (std::size_t r = 0; r < cfg.replications; ++r)
    {
        const auto res = run_replication(cfg, r);
        REQUIRE_FALSE(res.failure);
        diff.add(*res.values[0] - *res.values[1]);
    }
    CHECK(std::abs(diff.mean) < 3 * diff.se());
}

TEST_CASE("weighted and census participation fits share their limit")
{
    const std::size_t R = 500;
    auto census = base_config(CensusNested{}, 10'000, R);
    census.estimators = {EstimatorId::IpwNonRandomized};
    census.arms = {1};
    census.oracle_m = 100'000;
    auto sub = census;
    sub.design = SubsampledNested{0.3};
    const auto a = run_experiment(census);
    const auto b = run_experiment(sub);
    REQUIRE(a.participation_coefficients.size() == R);
    REQUIRE(b.participation_coefficients.size() == R);
    for (std::size_t j = 0; j < 2; ++j)
    {
        detail::Moments ma, mb;
        for (std::size_t r = 0; r < R; ++r)
        {
            ma.add(a.participation_coefficients[r][j]);
            mb.add(b.participation_coefficients[r][j]);
        }
        const double z = (ma.mean - mb.mean) / std::hypot(ma.se(), mb.se());
        CHECK(std::abs(z) < 2.576);
    }
}

TEST_CASE("design comparison")
{
    auto cfg = base_config(CensusNested{}, 10'000, 200);
    cfg.estimators = {EstimatorId::GFormulaTarget};
    cfg.arms = {1};

    SECTION("efficiency does not degrade with larger c")
    {
        const auto cells = design_comparison(
            cfg, {SubsampledNested{0.1}, SubsampledNested{0.5}, SubsampledNested{1.0}});
        REQUIRE(cells.size() == 3);
        const double sd_low = cells[0].rows[0].sd, sd_high = cells[2].rows[0].sd;
        const double noise = sd_low / std::sqrt(2.0 * 199.0);
        CHECK(sd_high <= sd_low + 2 * noise);
        CHECK(cells[0].truth.mean_target.value == cells[2].truth.mean_target.value);
    }
    SECTION("single cell gives one row")
    {
        const auto cells = design_comparison(cfg, {CensusNested{}});
        const std::string csv = summary_to_csv(cells);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
    }
    SECTION("census and c = 1 coincide")
    {
        cfg.replications = 30;
        const auto cells = design_comparison(cfg, {CensusNested{}, SubsampledNested{1.0}});
        CHECK(cells[0].rows[0].mean == cells[1].rows[0].mean);
        CHECK(cells[0].rows[0].sd == cells[1].rows[0].sd);
    }
    SECTION("empty grid")
    {
        CHECK_THROWS_AS(design_comparison(cfg, {}), InvalidArgument);
    }
}

TEST_CASE("experiment config JSON")
{
    auto cfg = base_config(fixtures::covariate_design(), 1000, 10);
    cfg.estimators = {EstimatorId::IpwTargetHT, EstimatorId::TrialOnly};
    cfg.misspecify.participation = true;
    cfg.bootstrap = 150;
    cfg.ipw.truncate_quantile = 0.99;
    const json j = to_json(cfg);
    CHECK(to_json(experiment_config_from_json(j)) == j);

    json bad = j;
    bad.erase("replications");
    CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
    bad = j;
    bad["replications"] = 0;
    CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
    bad = j;
    bad["estimators"] = json::array({"nope"});
    CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);

    json grid = {{"c_values", {0.2, 0.6}}, {"designs", json::array({json{{"type", "census"}}})}};
    const auto cells = design_grid_from_json(grid);
    REQUIRE(cells.size() == 3);
    CHECK(cells[0].is<CensusNested>());
    CHECK(cells[2].constant_fraction() == 0.6);
    CHECK_THROWS_AS(design_grid_from_json(json{{"c_values", {1.5}}}), ConfigError);
}
