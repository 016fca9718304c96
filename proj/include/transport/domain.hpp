#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "transport/errors.hpp"

namespace transport {

//---------------------------------------------------------------------------//
// Covariates and simulator-side units
//---------------------------------------------------------------------------//

/*!
 * Baseline covariates X = (X1, X2) of one unit.
 *
 * The split point k (X1 = values[0, k), always observed) is a property of
 * the dataset, not of each vector; see ObservedDataset::aux_split().
 */
using CovariateVector = std::vector<double>;

//! One superpopulation unit, including both potential outcomes.
struct TruthRecord
{
    CovariateVector x;
    int s = 0;                  //!< trial participation
    std::optional<int> a;       //!< treatment, only when s == 1
    double y0 = 0.0;
    double y1 = 0.0;
    std::optional<double> y;    //!< realized outcome, only when s == 1
    int d = 1;                  //!< sampling indicator

    double potential(int arm) const { return arm == 1 ? y1 : y0; }
};

//---------------------------------------------------------------------------//
// Observed records
//---------------------------------------------------------------------------//

//! (X, A, Y, S=1, D=1)
struct TrialParticipant
{
    CovariateVector x;
    int a = 0;
    double y = 0.0;
};

//! (X, S=0, D=1); treatment and outcome are never stored.
struct SampledNonRandomized
{
    CovariateVector x;
};

using ObservedRecord = std::variant<TrialParticipant, SampledNonRandomized>;

inline const CovariateVector& covariates(const ObservedRecord& r)
{
    return std::visit([](const auto& rec) -> const CovariateVector& { return rec.x; }, r);
}

inline bool is_trial(const ObservedRecord& r)
{
    return std::holds_alternative<TrialParticipant>(r);
}

//---------------------------------------------------------------------------//
// Designs
//---------------------------------------------------------------------------//

struct CensusNested
{
};

struct SubsampledNested
{
    double c = 1.0;
};

/*!
 * Known sampling probability c(X1) for non-randomized units.
 *
 * Step function of one auxiliary coordinate: with sorted cut points
 * t_0 < ... < t_{m-1}, the probability is probs[j] where j is the number of
 * cut points strictly below x[coordinate]. So cuts = {0}, probs = {0.2, 0.8}
 * encodes c(X1) = 0.2 + 0.6 * 1{X1 > 0}.
 */
struct SamplingTable
{
    std::size_t coordinate = 0;
    std::vector<double> cuts;
    std::vector<double> probs;

    std::size_t bin(std::span<const double> x) const
    {
        const double v = x[coordinate];
        return static_cast<std::size_t>(
            std::lower_bound(cuts.begin(), cuts.end(), v) - cuts.begin());
    }

    double operator()(std::span<const double> x) const { return probs[bin(x)]; }

    void validate() const
    {
        if (probs.size() != cuts.size() + 1)
            throw InvalidArgument("c_table: probs must have one more entry than cuts");
        if (!std::is_sorted(cuts.begin(), cuts.end())
            || std::adjacent_find(cuts.begin(), cuts.end()) != cuts.end())
            throw InvalidArgument("c_table: cuts must be strictly increasing");
        for (double v : cuts)
            if (!std::isfinite(v))
                throw InvalidArgument("c_table: cuts must be finite");
        for (double pr : probs)
            if (!(pr > 0.0 && pr <= 1.0))
                throw InvalidArgument("c_table: sampling probabilities must lie in (0, 1]");
    }
};

struct SubsampledNestedCovariate
{
    SamplingTable c_table;
};

namespace detail {
struct SimulatorAccess;
}

/*!
 * Non-nested (composite dataset) design.
 *
 * The sampling fraction u is known only to the simulator. Estimators see a
 * redacted design: there is no public accessor for u.
 */
class NonNested
{
  public:
    NonNested() = default;
    explicit NonNested(double u_hidden) : u_hidden_(u_hidden) {}

    bool has_hidden_fraction() const noexcept { return u_hidden_.has_value(); }
    NonNested redacted() const { return NonNested{}; }

  private:
    friend struct detail::SimulatorAccess;
    std::optional<double> u_hidden_;
};

namespace detail {
//! Unsealing point for u; reserved for the simulator, the oracle and tests.
struct SimulatorAccess
{
    static std::optional<double> hidden_fraction(const NonNested& design)
    {
        return design.u_hidden_;
    }
};
} // namespace detail

struct DesignSpec
{
    using Variant
        = std::variant<CensusNested, SubsampledNested, SubsampledNestedCovariate, NonNested>;
    Variant variant = CensusNested{};

    DesignSpec() = default;
    template<class T>
        requires std::is_constructible_v<Variant, T>
    DesignSpec(T v) : variant(std::move(v))
    {
    }

    template<class T>
    bool is() const
    {
        return std::holds_alternative<T>(variant);
    }

    bool is_nested() const { return !is<NonNested>(); }

    std::string_view name() const
    {
        static constexpr std::array<std::string_view, 4> names
            = {"census", "subsampled", "subsampled_covariate", "non_nested"};
        return names[variant.index()];
    }

    //! Constant sampling fraction c when the design has one (census: 1).
    std::optional<double> constant_fraction() const
    {
        if (is<CensusNested>())
            return 1.0;
        if (const auto* s = std::get_if<SubsampledNested>(&variant))
            return s->c;
        return std::nullopt;
    }

    /*!
     * Known Pr[D=1 | X, S=0] for a non-randomized unit with covariates x.
     * Throws NotIdentifiable for non-nested designs.
     */
    double sampling_probability(std::span<const double> x) const
    {
        return std::visit(
            [&](const auto& d) -> double {
                using T = std::decay_t<decltype(d)>;
                if constexpr (std::is_same_v<T, CensusNested>)
                    return 1.0;
                else if constexpr (std::is_same_v<T, SubsampledNested>)
                    return d.c;
                else if constexpr (std::is_same_v<T, SubsampledNestedCovariate>)
                    return d.c_table(x);
                else
                    throw NotIdentifiable(
                        "not identifiable under non-nested design: sampling fraction is unknown");
            },
            variant);
    }

    //! Copy with any simulator-only information removed.
    DesignSpec redacted() const
    {
        if (const auto* nn = std::get_if<NonNested>(&variant))
            return DesignSpec{nn->redacted()};
        return *this;
    }

    void validate() const
    {
        if (const auto* s = std::get_if<SubsampledNested>(&variant))
        {
            if (!(s->c > 0.0 && s->c <= 1.0))
                throw InvalidArgument("subsampled design: c must lie in (0, 1]");
        }
        else if (const auto* cv = std::get_if<SubsampledNestedCovariate>(&variant))
        {
            cv->c_table.validate();
        }
        else if (const auto* nn = std::get_if<NonNested>(&variant))
        {
            if (auto u = detail::SimulatorAccess::hidden_fraction(*nn); u && !(*u > 0.0 && *u <= 1.0))
                throw InvalidArgument("non-nested design: u must lie in (0, 1]");
        }
    }
};

//---------------------------------------------------------------------------//
// Identification
//---------------------------------------------------------------------------//

enum class Estimand
{
    MeanTarget,               //!< E[Y^a]
    MeanNonRandomized,        //!< E[Y^a | S=0]
    MarginalParticipation,    //!< Pr[S=1]
    ConditionalParticipation, //!< Pr[S=1 | X]
};

inline constexpr std::array<Estimand, 4> all_estimands = {
    Estimand::MeanTarget,
    Estimand::MeanNonRandomized,
    Estimand::MarginalParticipation,
    Estimand::ConditionalParticipation,
};

inline std::string_view to_string(Estimand e)
{
    switch (e)
    {
        case Estimand::MeanTarget: return "mean_target";
        case Estimand::MeanNonRandomized: return "mean_nonrandomized";
        case Estimand::MarginalParticipation: return "marginal_participation";
        case Estimand::ConditionalParticipation: return "conditional_participation";
    }
    return "?";
}

//! Which quantities each study design identifies.
inline std::set<Estimand> identification_matrix(const DesignSpec& design)
{
    if (!design.is_nested())
        return {Estimand::MeanNonRandomized};
    return {all_estimands.begin(), all_estimands.end()};
}

inline bool identifies(const DesignSpec& design, Estimand e)
{
    return identification_matrix(design).contains(e);
}

inline void require_identified(const DesignSpec& design, Estimand e)
{
    if (!identifies(design, e))
        throw NotIdentifiable("not identifiable under non-nested design: "
                              + std::string(to_string(e)));
}

//---------------------------------------------------------------------------//
// Observed dataset
//---------------------------------------------------------------------------//

//! Known Pr[A=a | X, S=1], constant per arm.
struct TreatmentProbability
{
    std::array<double, 2> arm = {0.5, 0.5};

    double operator()(int a) const { return arm.at(static_cast<std::size_t>(a)); }

    static TreatmentProbability from_treated(double e) { return {{1.0 - e, e}}; }
};

class ObservedDataset
{
  public:
    ObservedDataset(std::vector<ObservedRecord> records,
                    DesignSpec design,
                    std::size_t p,
                    std::size_t k,
                    TreatmentProbability treatment_prob,
                    std::optional<std::uint64_t> n_unsampled_nonrandomized)
        : records_(std::move(records))
        , design_(std::move(design))
        , p_(p)
        , k_(k)
        , treatment_prob_(treatment_prob)
        , n_unsampled_(n_unsampled_nonrandomized)
    {
        validate();
    }

    const std::vector<ObservedRecord>& records() const noexcept { return records_; }
    const DesignSpec& design() const noexcept { return design_; }
    std::size_t dimension() const noexcept { return p_; }
    std::size_t aux_split() const noexcept { return k_; }
    const TreatmentProbability& treatment_prob() const noexcept { return treatment_prob_; }
    std::optional<std::uint64_t> n_unsampled_nonrandomized() const noexcept
    {
        return n_unsampled_;
    }

    std::size_t size() const noexcept { return records_.size(); }
    std::size_t trial_count() const noexcept { return n_trial_; }
    std::size_t external_count() const noexcept { return records_.size() - n_trial_; }
    std::size_t arm_count(int a) const { return n_arm_.at(static_cast<std::size_t>(a)); }

  private:
    void validate()
    {
        design_.validate();
        if (design_.is_nested() != n_unsampled_.has_value())
            throw InvalidArgument(design_.is_nested()
                                      ? "nested design requires n_unsampled_nonrandomized"
                                      : "non-nested design must not carry n_unsampled_nonrandomized");
        if (k_ > p_)
            throw InvalidArgument("auxiliary split k exceeds covariate dimension");
        if (const auto* cv = std::get_if<SubsampledNestedCovariate>(&design_.variant);
            cv && cv->c_table.coordinate >= k_)
            throw InvalidArgument("c_table must depend on auxiliary covariates X1 only");
        for (double e : treatment_prob_.arm)
            if (!(e > 0.0 && e < 1.0))
                throw InvalidArgument("treatment probabilities must lie in (0, 1)");

        for (const auto& r : records_)
        {
            const auto& x = covariates(r);
            if (x.size() != p_)
                throw InvalidArgument("record covariate length differs from dataset dimension");
            for (double v : x)
                if (!std::isfinite(v))
                    throw InvalidArgument("covariates must be finite");
            if (const auto* t = std::get_if<TrialParticipant>(&r))
            {
                if (t->a != 0 && t->a != 1)
                    throw InvalidArgument("treatment must be 0 or 1");
                if (!std::isfinite(t->y))
                    throw InvalidArgument("outcomes must be finite");
                ++n_trial_;
                ++n_arm_[static_cast<std::size_t>(t->a)];
            }
        }
        if (n_arm_[0] == 0 || n_arm_[1] == 0)
            throw InsufficientData("dataset needs at least one trial participant per arm");
    }

    std::vector<ObservedRecord> records_;
    DesignSpec design_;
    std::size_t p_ = 0;
    std::size_t k_ = 0;
    TreatmentProbability treatment_prob_;
    std::optional<std::uint64_t> n_unsampled_;
    std::size_t n_trial_ = 0;
    std::array<std::size_t, 2> n_arm_{0, 0};
};

namespace detail {

//! Covariate indices used by a model; all of 0..p-1 when not given.
inline std::vector<std::size_t> resolve_columns(const std::optional<std::vector<std::size_t>>& cols,
                                                std::size_t p)
{
    std::vector<std::size_t> out;
    if (cols)
    {
        out = *cols;
        for (std::size_t c : out)
            if (c >= p)
                throw InvalidArgument("model column index out of range");
    }
    else
    {
        out.resize(p);
        std::iota(out.begin(), out.end(), std::size_t{0});
    }
    return out;
}

} // namespace detail

} // namespace transport
