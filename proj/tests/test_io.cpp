#include <catch_amalgamated.hpp>

#include "fixtures.hpp"

using namespace transport;

namespace {

std::string message_of(auto&& call)
{
    try
    {
        call();
    }
    catch (const ConfigError& e)
    {
        return e.what();
    }
    return {};
}

} // namespace

TEST_CASE("DGP JSON uses the documented keys and round-trips")
{
    auto dgp = dgp1(7);
    dgp.covariates.push_back(BernoulliDist{0.25});
    dgp.covariates.push_back(UniformDist{-1.0, 2.0});
    dgp.participation_logit = {-1.0, 0.5, 0.1, 0.2};
    dgp.outcome_mean_a0 = {1.0, 1.0, 0.0, 0.0};
    dgp.outcome_mean_a1 = {2.0, 1.3, 0.0, 0.0};
    const json j = to_json(dgp);
    std::vector<std::string> keys;
    for (const auto& [k, v] : j.items())
        keys.push_back(k);
    CHECK(keys
          == std::vector<std::string>{"covariates", "participation_logit", "treatment_prob",
                                      "outcome_mean_a0", "outcome_mean_a1", "noise_sd", "seed"});
    const auto back = dgp_from_json(j);
    CHECK(to_json(back) == j);
}

TEST_CASE("missing DGP key is named in the error")
{
    json j = to_json(dgp1());
    j.erase("noise_sd");
    CHECK_THAT(message_of([&] { dgp_from_json(j); }),
               Catch::Matchers::ContainsSubstring("noise_sd"));
    json bad = to_json(dgp1());
    bad["treatment_prob"] = 2.0;
    CHECK_THROWS_AS(dgp_from_json(bad), ConfigError);
}

TEST_CASE("design JSON round-trips and keeps u out unless asked")
{
    const std::vector<DesignSpec> designs{CensusNested{}, SubsampledNested{0.3},
                                          fixtures::covariate_design(), NonNested{0.2}};
    for (const auto& d : designs)
    {
        const json hidden = to_json(d, true);
        CHECK(to_json(design_from_json(hidden), true) == hidden);
    }
    CHECK_FALSE(to_json(DesignSpec(NonNested{0.2})).contains("u"));
    CHECK(to_json(DesignSpec(NonNested{0.2}), true).at("u") == 0.2);
    CHECK_THROWS_AS(design_from_json(json{{"type", "subsampled"}, {"c", 0.0}}), ConfigError);
    CHECK_THROWS_AS(design_from_json(json{{"type", "nope"}}), ConfigError);
}

TEST_CASE("dataset CSV and sidecar")
{
    const auto data = fixtures::dgp1_dataset(2000, SubsampledNested{0.5}, 3);
    const std::string csv = dataset_to_csv(data);
    CHECK(csv.rfind("role,a,y,x1\n", 0) == 0);
    CHECK(csv.find("\nexternal,,,") != std::string::npos);

    const json side = dataset_sidecar(data);
    CHECK(side.at("n_unsampled_nonrandomized") == *data.n_unsampled_nonrandomized());
    const auto back = dataset_from_text(csv, side);
    CHECK(dataset_to_csv(back) == csv);
    CHECK(dataset_sidecar(back) == side);

    const auto composite = fixtures::dgp1_dataset(2000, NonNested{0.5}, 3);
    const json cside = dataset_sidecar(composite);
    CHECK_FALSE(cside.contains("n_unsampled_nonrandomized"));
    CHECK_FALSE(cside.at("design").contains("u"));
}

TEST_CASE("malformed dataset rows are reported with line numbers")
{
    const auto data = fixtures::dgp1_dataset(200, CensusNested{}, 3);
    const json side = dataset_sidecar(data);
    const std::string good = dataset_to_csv(data);

    CHECK_THAT(message_of([&] { dataset_from_text("role,a,y,x1\ntrial,1,abc,0.5\n", side); }),
               Catch::Matchers::ContainsSubstring("line 2"));
    CHECK_THROWS_AS(dataset_from_text("role,a,y,x1\nexternal,1,2,0.5\n", side), ConfigError);
    CHECK_THROWS_AS(dataset_from_text("role,y,a,x1\n", side), ConfigError);
    CHECK_THROWS_AS(dataset_from_text(good + "trial,2,1,0\n", side), ConfigError);
    CHECK_THROWS_AS(dataset_from_text(good + "trial,1,1\n", side), ConfigError);

    json no_tally = side;
    no_tally.erase("n_unsampled_nonrandomized");
    CHECK_THROWS_AS(dataset_from_text(good, no_tally), ConfigError);
}

TEST_CASE("model and report serialization")
{
    const auto data = fixtures::dgp1_dataset(5000, NonNested{0.3}, 4);
    const auto pm = fit_participation(data);
    const json j = to_json(pm);
    CHECK(j.at("scale") == "shifted");
    for (const char* key : {"coefficients", "scale", "objective", "grad_norm", "iterations"})
        CHECK(j.contains(key));
    const auto back = participation_model_from_json(j);
    CHECK(back.coefficients == pm.coefficients);
    CHECK(back.scale == pm.scale);

    const auto r = ipw_mean_nonrandomized(data, pm, 1);
    const json rj = to_json(r);
    CHECK(rj.at("estimand") == "nonrandomized");
    CHECK(rj.at("identifiable") == true);
    CHECK(std::string(estimate_csv_header) == "estimand,arm,method,value,ess,max_weight,identifiable");
    CHECK(to_csv_row(r).rfind("nonrandomized,1,ipw_hajek,", 0) == 0);

    const auto none = not_identifiable_report(1, Population::Target, Method::GFormula);
    CHECK(to_json(none).at("value").is_null());
    CHECK(to_json(none).at("identifiable") == false);
}

TEST_CASE("number formatting round-trips")
{
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 1e300, 0.0})
        CHECK(parse_double(format_double(v), "v") == v);
    CHECK_THROWS_AS(parse_double("nan", "v"), ConfigError);
    CHECK_THROWS_AS(parse_double("1.0x", "v"), ConfigError);
}
