#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "transport/dgp.hpp"
#include "transport/domain.hpp"
#include "transport/errors.hpp"
#include "transport/estimators.hpp"
#include "transport/outcome.hpp"
#include "transport/participation.hpp"

namespace transport {

using json = nlohmann::ordered_json;

//---------------------------------------------------------------------------//
// Helpers
//---------------------------------------------------------------------------//

//! Shortest representation that round-trips; "nan"/"inf" spelled out.
inline std::string format_double(double v)
{
    if (std::isnan(v))
        return "nan";
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

inline double parse_double(std::string_view text, const std::string& where)
{
    double v = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last || !std::isfinite(v))
        throw ConfigError(where + ": expected a finite number, got '" + std::string(text) + "'");
    return v;
}

namespace detail {

inline const json& require_key(const json& j, std::string_view key, const std::string& where)
{
    if (!j.is_object())
        throw ConfigError(where + ": expected an object");
    auto it = j.find(std::string(key));
    if (it == j.end())
        throw ConfigError(where + ": missing required key '" + std::string(key) + "'");
    return *it;
}

inline double require_number(const json& j, std::string_view key, const std::string& where)
{
    const auto& v = require_key(j, key, where);
    if (!v.is_number())
        throw ConfigError(where + "." + std::string(key) + ": expected a number");
    return v.get<double>();
}

inline std::vector<double> require_numbers(const json& j, std::string_view key, const std::string& where)
{
    const auto& v = require_key(j, key, where);
    if (!v.is_array())
        throw ConfigError(where + "." + std::string(key) + ": expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : v)
    {
        if (!e.is_number())
            throw ConfigError(where + "." + std::string(key) + ": expected an array of numbers");
        out.push_back(e.get<double>());
    }
    return out;
}

inline std::uint64_t require_uint(const json& j, std::string_view key, const std::string& where)
{
    const auto& v = require_key(j, key, where);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
        throw ConfigError(where + "." + std::string(key) + ": expected a non-negative integer");
    return v.get<std::uint64_t>();
}

inline std::string require_string(const json& j, std::string_view key, const std::string& where)
{
    const auto& v = require_key(j, key, where);
    if (!v.is_string())
        throw ConfigError(where + "." + std::string(key) + ": expected a string");
    return v.get<std::string>();
}

//! Run a domain validate() and re-raise its message as a config error.
template<class F>
void validate_as_config(F&& validate, const std::string& where)
{
    try
    {
        validate();
    }
    catch (const InvalidArgument& e)
    {
        throw ConfigError(where + ": " + e.what());
    }
}

} // namespace detail

//---------------------------------------------------------------------------//
// DgpSpec
//---------------------------------------------------------------------------//

inline json to_json(const CovariateDist& dist)
{
    return std::visit(
        [](const auto& d) -> json {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, NormalDist>)
                return {{"dist", "normal"}, {"mean", d.mean}, {"sd", d.sd}};
            else if constexpr (std::is_same_v<T, BernoulliDist>)
                return {{"dist", "bernoulli"}, {"p", d.p}};
            else
                return {{"dist", "uniform"}, {"lo", d.lo}, {"hi", d.hi}};
        },
        dist);
}

inline CovariateDist covariate_dist_from_json(const json& j, const std::string& where)
{
    const std::string kind = detail::require_string(j, "dist", where);
    if (kind == "normal")
        return NormalDist{detail::require_number(j, "mean", where), detail::require_number(j, "sd", where)};
    if (kind == "bernoulli")
        return BernoulliDist{detail::require_number(j, "p", where)};
    if (kind == "uniform")
        return UniformDist{detail::require_number(j, "lo", where), detail::require_number(j, "hi", where)};
    throw ConfigError(where + ".dist: unknown distribution '" + kind + "'");
}

inline json to_json(const DgpSpec& dgp)
{
    json cov = json::array();
    for (const auto& d : dgp.covariates)
        cov.push_back(to_json(d));
    return {
        {"covariates", cov},
        {"participation_logit", dgp.participation_logit},
        {"treatment_prob", dgp.treatment_prob},
        {"outcome_mean_a0", dgp.outcome_mean_a0},
        {"outcome_mean_a1", dgp.outcome_mean_a1},
        {"noise_sd", dgp.noise_sd},
        {"seed", dgp.seed},
    };
}

inline DgpSpec dgp_from_json(const json& j, const std::string& where = "dgp")
{
    DgpSpec dgp;
    const auto& cov = detail::require_key(j, "covariates", where);
    if (!cov.is_array())
        throw ConfigError(where + ".covariates: expected an array");
    for (std::size_t i = 0; i < cov.size(); ++i)
        dgp.covariates.push_back(
            covariate_dist_from_json(cov[i], where + ".covariates[" + std::to_string(i) + "]"));
    dgp.participation_logit = detail::require_numbers(j, "participation_logit", where);
    dgp.treatment_prob = detail::require_number(j, "treatment_prob", where);
    dgp.outcome_mean_a0 = detail::require_numbers(j, "outcome_mean_a0", where);
    dgp.outcome_mean_a1 = detail::require_numbers(j, "outcome_mean_a1", where);
    dgp.noise_sd = detail::require_number(j, "noise_sd", where);
    dgp.seed = detail::require_uint(j, "seed", where);
    detail::validate_as_config([&] { dgp.validate(); }, where);
    return dgp;
}

//---------------------------------------------------------------------------//
// DesignSpec
//---------------------------------------------------------------------------//

/*!
 * Design object: {"type": "census"}, {"type": "subsampled", "c": ...},
 * {"type": "subsampled_covariate", "c_table": {coordinate, cuts, probs}} or
 * {"type": "non_nested"}. With include_hidden the simulator-side "u" of a
 * non-nested design is written too; datasets never include it.
 */
inline json to_json(const DesignSpec& design, bool include_hidden = false)
{
    json j = {{"type", std::string(design.name())}};
    if (const auto* s = std::get_if<SubsampledNested>(&design.variant))
        j["c"] = s->c;
    else if (const auto* cv = std::get_if<SubsampledNestedCovariate>(&design.variant))
        j["c_table"] = {{"coordinate", cv->c_table.coordinate},
                        {"cuts", cv->c_table.cuts},
                        {"probs", cv->c_table.probs}};
    else if (const auto* nn = std::get_if<NonNested>(&design.variant); nn && include_hidden)
        if (auto u = detail::SimulatorAccess::hidden_fraction(*nn))
            j["u"] = *u;
    return j;
}

inline DesignSpec design_from_json(const json& j, const std::string& where = "design")
{
    const std::string type = detail::require_string(j, "type", where);
    DesignSpec design;
    if (type == "census")
        design = CensusNested{};
    else if (type == "subsampled")
        design = SubsampledNested{detail::require_number(j, "c", where)};
    else if (type == "subsampled_covariate")
    {
        const auto& t = detail::require_key(j, "c_table", where);
        SamplingTable table;
        table.coordinate = detail::require_uint(t, "coordinate", where + ".c_table");
        table.cuts = detail::require_numbers(t, "cuts", where + ".c_table");
        table.probs = detail::require_numbers(t, "probs", where + ".c_table");
        design = SubsampledNestedCovariate{std::move(table)};
    }
    else if (type == "non_nested")
    {
        if (j.contains("u"))
            design = NonNested{detail::require_number(j, "u", where)};
        else
            design = NonNested{};
    }
    else
        throw ConfigError(where + ".type: unknown design '" + type + "'");
    detail::validate_as_config([&] { design.validate(); }, where);
    return design;
}

//---------------------------------------------------------------------------//
// Dataset: CSV + sidecar JSON
//---------------------------------------------------------------------------//

inline std::string dataset_csv_header(std::size_t p)
{
    std::string header = "role,a,y";
    for (std::size_t j = 1; j <= p; ++j)
        header += ",x" + std::to_string(j);
    return header;
}

//! Rows "role,a,y,x1,...,xp"; a and y are empty for external rows.
inline std::string dataset_to_csv(const ObservedDataset& data)
{
    std::string out = dataset_csv_header(data.dimension());
    out += '\n';
    for (const auto& rec : data.records())
    {
        if (const auto* t = std::get_if<TrialParticipant>(&rec))
        {
            out += "trial,";
            out += std::to_string(t->a);
            out += ',';
            out += format_double(t->y);
        }
        else
        {
            out += "external,,";
        }
        for (double v : covariates(rec))
        {
            out += ',';
            out += format_double(v);
        }
        out += '\n';
    }
    return out;
}

inline json dataset_sidecar(const ObservedDataset& data)
{
    json j = {
        {"design", to_json(data.design())},
        {"k", data.aux_split()},
        {"treatment_prob", data.treatment_prob().arm},
    };
    if (auto n = data.n_unsampled_nonrandomized())
        j["n_unsampled_nonrandomized"] = *n;
    return j;
}

inline ObservedDataset dataset_from_text(std::string_view csv, const json& sidecar)
{
    const std::string where = "sidecar";
    const DesignSpec design = design_from_json(detail::require_key(sidecar, "design", where),
                                               where + ".design");
    const auto k = static_cast<std::size_t>(detail::require_uint(sidecar, "k", where));
    const auto tp = detail::require_numbers(sidecar, "treatment_prob", where);
    if (tp.size() != 2)
        throw ConfigError(where + ".treatment_prob: expected [Pr(A=0), Pr(A=1)]");
    std::optional<std::uint64_t> n_unsampled;
    if (sidecar.contains("n_unsampled_nonrandomized"))
        n_unsampled = detail::require_uint(sidecar, "n_unsampled_nonrandomized", where);

    std::istringstream in{std::string(csv)};
    std::string line;
    if (!std::getline(in, line))
        throw ConfigError("dataset csv: empty file");
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ','))
            header.push_back(field);
    }
    if (header.size() < 3)
        throw ConfigError("dataset csv line 1: header must start with role,a,y");
    const std::size_t p = header.size() - 3;
    if (line != dataset_csv_header(p))
        throw ConfigError("dataset csv line 1: expected header '" + dataset_csv_header(p) + "'");

    std::vector<ObservedRecord> records;
    std::size_t line_no = 1;
    while (std::getline(in, line))
    {
        ++line_no;
        if (line.empty())
            continue;
        const std::string at = "dataset csv line " + std::to_string(line_no);
        std::vector<std::string_view> fields;
        std::string_view rest(line);
        while (true)
        {
            const auto comma = rest.find(',');
            fields.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos)
                break;
            rest.remove_prefix(comma + 1);
        }
        if (fields.size() != p + 3)
            throw ConfigError(at + ": expected " + std::to_string(p + 3) + " fields");
        CovariateVector x(p);
        for (std::size_t j = 0; j < p; ++j)
            x[j] = parse_double(fields[j + 3], at + " x" + std::to_string(j + 1));
        if (fields[0] == "trial")
        {
            const double a = parse_double(fields[1], at + " a");
            if (a != 0.0 && a != 1.0)
                throw ConfigError(at + ": a must be 0 or 1");
            records.emplace_back(
                TrialParticipant{std::move(x), static_cast<int>(a), parse_double(fields[2], at + " y")});
        }
        else if (fields[0] == "external")
        {
            if (!fields[1].empty() || !fields[2].empty())
                throw ConfigError(at + ": external rows must leave a and y empty");
            records.emplace_back(SampledNonRandomized{std::move(x)});
        }
        else
            throw ConfigError(at + ": role must be 'trial' or 'external'");
    }

    try
    {
        return ObservedDataset(std::move(records), design, p, k, TreatmentProbability{{tp[0], tp[1]}},
                               n_unsampled);
    }
    catch (const InvalidArgument& e)
    {
        throw ConfigError(std::string("dataset: ") + e.what());
    }
}

inline std::string read_text_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ConfigError("cannot write '" + path.string() + "'");
    out << text;
}

inline json read_json_file(const std::filesystem::path& path)
{
    const std::string text = read_text_file(path);
    try
    {
        return json::parse(text);
    }
    catch (const json::parse_error& e)
    {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

//! Sidecar path for a dataset CSV: data.csv -> data.json.
inline std::filesystem::path sidecar_path(std::filesystem::path csv)
{
    return csv.replace_extension(".json");
}

inline void write_dataset(const ObservedDataset& data, const std::filesystem::path& csv)
{
    write_text_file(csv, dataset_to_csv(data));
    write_text_file(sidecar_path(csv), dataset_sidecar(data).dump(2) + "\n");
}

inline ObservedDataset read_dataset(const std::filesystem::path& csv)
{
    return dataset_from_text(read_text_file(csv), read_json_file(sidecar_path(csv)));
}

//---------------------------------------------------------------------------//
// Models and reports
//---------------------------------------------------------------------------//

inline json to_json(const ParticipationModel& model)
{
    json j = {
        {"coefficients", model.coefficients},
        {"scale", std::string(to_string(model.scale))},
        {"objective", model.diagnostics.objective},
        {"grad_norm", model.diagnostics.grad_norm},
        {"iterations", model.diagnostics.iterations},
    };
    j["columns"] = model.columns;
    return j;
}

inline ParticipationModel participation_model_from_json(const json& j,
                                                        const std::string& where = "model")
{
    ParticipationModel m;
    m.coefficients = detail::require_numbers(j, "coefficients", where);
    const std::string scale = detail::require_string(j, "scale", where);
    if (scale == "population")
        m.scale = ParticipationScale::Population;
    else if (scale == "sample")
        m.scale = ParticipationScale::Sample;
    else if (scale == "shifted")
        m.scale = ParticipationScale::ShiftedIntercept;
    else
        throw ConfigError(where + ".scale: unknown scale '" + scale + "'");
    m.diagnostics.objective = detail::require_number(j, "objective", where);
    m.diagnostics.grad_norm = detail::require_number(j, "grad_norm", where);
    m.diagnostics.iterations = static_cast<int>(detail::require_uint(j, "iterations", where));
    if (j.contains("columns"))
        m.columns = j.at("columns").get<std::vector<std::size_t>>();
    else
        for (std::size_t c = 0; c + 1 < m.coefficients.size(); ++c)
            m.columns.push_back(c);
    if (m.columns.size() + 1 != m.coefficients.size())
        throw ConfigError(where + ": columns and coefficients disagree");
    return m;
}

inline json to_json(const OutcomeModel& model)
{
    return {
        {"coefficients", {{"a0", model.coefficients[0]}, {"a1", model.coefficients[1]}}},
        {"residual_variance", model.residual_variance},
        {"fit_size", model.fit_size},
        {"columns", model.columns},
    };
}

inline json to_json(const EstimateReport& r)
{
    json j = {
        {"estimand", std::string(to_string(r.population))},
        {"arm", r.arm},
        {"method", std::string(to_string(r.method))},
        {"value", r.value ? json(*r.value) : json(nullptr)},
        {"ess", r.weights.ess},
        {"max_weight", r.weights.max_normalized_weight},
        {"identifiable", r.identifiable},
    };
    if (r.weight_cap)
        j["weight_cap"] = *r.weight_cap;
    if (!r.warnings.empty())
        j["warnings"] = r.warnings;
    return j;
}

inline constexpr std::string_view estimate_csv_header
    = "estimand,arm,method,value,ess,max_weight,identifiable";

inline std::string to_csv_row(const EstimateReport& r)
{
    std::string row;
    row += to_string(r.population);
    row += ',' + std::to_string(r.arm) + ',';
    row += to_string(r.method);
    row += ',' + (r.value ? format_double(*r.value) : std::string());
    row += ',' + format_double(r.weights.ess);
    row += ',' + format_double(r.weights.max_normalized_weight);
    row += r.identifiable ? ",true" : ",false";
    return row;
}

} // namespace transport
