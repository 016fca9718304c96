#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "transport/detail/math.hpp"
#include "transport/domain.hpp"
#include "transport/errors.hpp"

namespace transport {

/*!
 * What the fitted logistic linear predictor estimates.
 *
 * Population: log Pr[S=1|X]/Pr[S=0|X] (census, or any design-weighted fit).
 * Sample: log-odds among sampled units in a nested design fit without
 * weights; population odds are c(X1) times the fitted odds.
 * ShiftedIntercept: non-nested fit; slopes are population slopes and the
 * intercept is b0 - ln u for an unknown u.
 */
enum class ParticipationScale
{
    Population,
    Sample,
    ShiftedIntercept,
};

inline std::string_view to_string(ParticipationScale s)
{
    switch (s)
    {
        case ParticipationScale::Population: return "population";
        case ParticipationScale::Sample: return "sample";
        case ParticipationScale::ShiftedIntercept: return "shifted";
    }
    return "?";
}

enum class Weighting
{
    Design,     //!< 1 for trial rows, 1 / Pr[D=1|S=0,X] for sampled external rows
    Unweighted, //!< 1 for every row
};

struct ParticipationFitOptions
{
    Weighting weighting = Weighting::Design;
    //! Covariate indices entering the model; all covariates when empty.
    std::optional<std::vector<std::size_t>> columns;
    double gradient_tolerance = 1e-8;
    int max_iterations = 100;
    double separation_bound = 30.0;
};

struct ParticipationFitDiagnostics
{
    double objective = 0.0; //!< normalized weighted log pseudo-likelihood at the fit
    double grad_norm = 0.0; //!< max-norm of its gradient
    int iterations = 0;
};

struct ParticipationModel
{
    std::vector<double> coefficients; //!< intercept, then one slope per column
    std::vector<std::size_t> columns;
    ParticipationScale scale = ParticipationScale::Population;
    ParticipationFitDiagnostics diagnostics;

    //! Linear predictor without the intercept.
    double slope_predictor(std::span<const double> x) const
    {
        double eta = 0.0;
        for (std::size_t j = 0; j < columns.size(); ++j)
            eta += coefficients[j + 1] * x[columns[j]];
        return eta;
    }

    double linear_predictor(std::span<const double> x) const
    {
        return coefficients[0] + slope_predictor(x);
    }
};

//---------------------------------------------------------------------------//
// Objective
//---------------------------------------------------------------------------//

/*!
 * Weighted logistic log pseudo-likelihood, normalized by the row count:
 *
 *   l(g) = (1/n) sum_i w_i [ s_i log p_i + (1 - s_i) log(1 - p_i) ],
 *   p_i = logistic(z_i' g).
 *
 * With unit weights on trial rows and 1/c on sampled external rows this is
 * the pseudo-likelihood whose limit equals the full-population likelihood.
 */
class LogisticObjective
{
  public:
    struct Evaluation
    {
        double value = 0.0;
        Eigen::VectorXd gradient;
        Eigen::MatrixXd information; //!< minus the Hessian
    };

    LogisticObjective(Eigen::MatrixXd design, Eigen::VectorXd response, Eigen::VectorXd weights)
        : z_(std::move(design)), s_(std::move(response)), w_(std::move(weights))
    {
        if (z_.rows() != s_.size() || z_.rows() != w_.size())
            throw InvalidArgument("logistic objective: inconsistent row counts");
    }

    Eigen::Index rows() const noexcept { return z_.rows(); }
    Eigen::Index parameters() const noexcept { return z_.cols(); }
    const Eigen::MatrixXd& design() const noexcept { return z_; }
    const Eigen::VectorXd& response() const noexcept { return s_; }
    const Eigen::VectorXd& weights() const noexcept { return w_; }

    double value(const Eigen::VectorXd& g) const
    {
        const Eigen::VectorXd eta = z_ * g;
        double acc = 0.0;
        for (Eigen::Index i = 0; i < eta.size(); ++i)
        {
            // log p = -softplus(-eta), log(1-p) = -softplus(eta)
            const double ll = s_[i] > 0.5 ? -detail::softplus(-eta[i]) : -detail::softplus(eta[i]);
            acc += w_[i] * ll;
        }
        return acc / static_cast<double>(rows());
    }

    Eigen::VectorXd gradient(const Eigen::VectorXd& g) const
    {
        return evaluate(g, false).gradient;
    }

    Evaluation evaluate(const Eigen::VectorXd& g, bool with_information = true) const
    {
        const Eigen::VectorXd eta = z_ * g;
        const double inv_n = 1.0 / static_cast<double>(rows());
        Eigen::VectorXd resid(eta.size());
        Eigen::VectorXd curv(eta.size());
        double acc = 0.0;
        for (Eigen::Index i = 0; i < eta.size(); ++i)
        {
            const double p = detail::logistic(eta[i]);
            const double ll = s_[i] > 0.5 ? -detail::softplus(-eta[i]) : -detail::softplus(eta[i]);
            acc += w_[i] * ll;
            resid[i] = w_[i] * (s_[i] - p);
            curv[i] = w_[i] * p * (1.0 - p);
        }
        Evaluation out;
        out.value = acc * inv_n;
        out.gradient = z_.transpose() * resid * inv_n;
        if (with_information)
            out.information = z_.transpose() * curv.asDiagonal() * z_ * inv_n;
        return out;
    }

  private:
    Eigen::MatrixXd z_;
    Eigen::VectorXd s_;
    Eigen::VectorXd w_;
};

namespace detail {

//! Weight of one row in the participation pseudo-likelihood.
inline double participation_weight(const ObservedDataset& data,
                                   const ObservedRecord& rec,
                                   Weighting weighting)
{
    if (is_trial(rec) || weighting == Weighting::Unweighted || !data.design().is_nested())
        return 1.0;
    return 1.0 / data.design().sampling_probability(covariates(rec));
}

} // namespace detail

inline LogisticObjective participation_objective(const ObservedDataset& data,
                                                 const ParticipationFitOptions& opts = {})
{
    const auto cols = detail::resolve_columns(opts.columns, data.dimension());
    const auto n = static_cast<Eigen::Index>(data.size());
    Eigen::MatrixXd z(n, static_cast<Eigen::Index>(cols.size() + 1));
    Eigen::VectorXd s(n);
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i)
    {
        const auto& rec = data.records()[static_cast<std::size_t>(i)];
        const auto& x = covariates(rec);
        z(i, 0) = 1.0;
        for (std::size_t j = 0; j < cols.size(); ++j)
            z(i, static_cast<Eigen::Index>(j + 1)) = x[cols[j]];
        s[i] = is_trial(rec) ? 1.0 : 0.0;
        w[i] = detail::participation_weight(data, rec, opts.weighting);
    }
    return LogisticObjective(std::move(z), std::move(s), std::move(w));
}

//---------------------------------------------------------------------------//
// Fitting
//---------------------------------------------------------------------------//

/*!
 * Maximize a logistic objective by Newton-Raphson with step halving.
 *
 * Stops when the max-norm of the gradient drops below the tolerance.
 * Throws SeparationDetected as soon as any coefficient leaves
 * [-bound, bound], RankDeficient when the information matrix is singular
 * and NonConvergence after max_iterations.
 */
inline ParticipationFitDiagnostics maximize_logistic(const LogisticObjective& objective,
                                                     Eigen::VectorXd& g,
                                                     const ParticipationFitOptions& opts)
{
    ParticipationFitDiagnostics diag;
    for (int iter = 0;; ++iter)
    {
        const auto ev = objective.evaluate(g);
        const double gnorm = ev.gradient.lpNorm<Eigen::Infinity>();
        diag = {ev.value, gnorm, iter};
        if (gnorm < opts.gradient_tolerance)
            return diag;
        if (iter >= opts.max_iterations)
            throw NonConvergence("participation fit: no convergence after "
                                     + std::to_string(opts.max_iterations)
                                     + " iterations, gradient norm " + std::to_string(gnorm),
                                 gnorm);

        Eigen::LDLT<Eigen::MatrixXd> ldlt(ev.information);
        const auto pivots = ldlt.vectorD();
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive()
            || pivots.minCoeff() <= 1e-12 * std::max(pivots.maxCoeff(), 1e-300))
            throw RankDeficient("participation fit: singular information matrix");
        const Eigen::VectorXd step = ldlt.solve(ev.gradient);

        // Accept ties at rounding level so the last Newton steps are not rejected.
        const double floor = ev.value - 1e-14 * std::max(1.0, std::abs(ev.value));
        double t = 1.0;
        Eigen::VectorXd next = g + step;
        int halvings = 0;
        while (!(objective.value(next) >= floor) && halvings < 50)
        {
            t *= 0.5;
            next = g + t * step;
            ++halvings;
        }
        if (halvings == 50)
            throw NonConvergence("participation fit: step halving failed, gradient norm "
                                     + std::to_string(gnorm),
                                 gnorm);
        g = next;
        if (g.lpNorm<Eigen::Infinity>() > opts.separation_bound)
            throw SeparationDetected("participation fit: coefficient magnitude exceeds "
                                     + std::to_string(opts.separation_bound)
                                     + " (separation)");
    }
}

/*!
 * Fit the logistic trial-participation model to an observed dataset.
 *
 * Design weighting puts weight 1 on trial rows and 1/c, 1/c(X1) (or 1 for a
 * census) on sampled external rows, so the fit targets the population
 * model. Non-nested data are always fit without weights; the slopes are
 * still the population slopes but the intercept is shifted by -ln u.
 */
inline ParticipationModel fit_participation(const ObservedDataset& data,
                                            const ParticipationFitOptions& opts = {})
{
    if (data.trial_count() == 0 || data.external_count() == 0)
        throw InsufficientData("participation fit needs trial and external rows");

    const auto objective = participation_objective(data, opts);
    ParticipationModel model;
    model.columns = detail::resolve_columns(opts.columns, data.dimension());

    const auto& design = data.design();
    if (!design.is_nested())
        model.scale = ParticipationScale::ShiftedIntercept;
    else if (opts.weighting == Weighting::Unweighted && !design.is<CensusNested>())
        model.scale = ParticipationScale::Sample;
    else
        model.scale = ParticipationScale::Population;

    // Start from the intercept-only solution.
    const auto& s = objective.response();
    const auto& w = objective.weights();
    const double w1 = s.dot(w);
    const double w0 = w.sum() - w1;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(objective.parameters());
    g[0] = std::log(w1 / w0);

    model.diagnostics = maximize_logistic(objective, g, opts);
    model.coefficients.assign(g.data(), g.data() + g.size());
    return model;
}

//---------------------------------------------------------------------------//
// Probabilities and odds
//---------------------------------------------------------------------------//

/*!
 * Pr[S=1] from sampled counts: {1 + (n_external / n_trial) / c}^-1.
 *
 * Under covariate-dependent sampling each external row counts 1/c(X1).
 */
inline double marginal_participation_probability(const ObservedDataset& data)
{
    require_identified(data.design(), Estimand::MarginalParticipation);
    const double n_trial = static_cast<double>(data.trial_count());
    if (n_trial == 0)
        throw InsufficientData("no trial rows");
    if (const auto c = data.design().constant_fraction())
    {
        const double odds_nonparticipation = static_cast<double>(data.external_count()) / n_trial;
        return 1.0 / (1.0 + odds_nonparticipation * (1.0 / *c));
    }
    double weighted_external = 0.0;
    for (const auto& rec : data.records())
        if (!is_trial(rec))
            weighted_external += 1.0 / data.design().sampling_probability(covariates(rec));
    return 1.0 / (1.0 + weighted_external / n_trial);
}

//! exp(linear predictor): population odds times an unknown positive constant
//! (the constant is 1 for population-scale models).
inline double participation_odds_up_to_constant(const ParticipationModel& model,
                                                std::span<const double> x)
{
    return std::exp(model.linear_predictor(x));
}

//! Population odds Pr[S=1|X=x] / Pr[S=0|X=x]; needs a nested design.
inline double odds_population(const ParticipationModel& model,
                              const DesignSpec& design,
                              std::span<const double> x)
{
    if (!design.is_nested() || model.scale == ParticipationScale::ShiftedIntercept)
        throw NotIdentifiable("not identifiable under non-nested design: participation odds");
    const double fitted = std::exp(model.linear_predictor(x));
    if (model.scale == ParticipationScale::Sample)
        return fitted * design.sampling_probability(x);
    return fitted;
}

//! Pr[S=1 | X=x] in the target population; needs a nested design.
inline double participation_probability(const ParticipationModel& model,
                                        const DesignSpec& design,
                                        std::span<const double> x)
{
    if (!design.is_nested() || model.scale == ParticipationScale::ShiftedIntercept)
        throw NotIdentifiable(
            "not identifiable under non-nested design: conditional participation probability");
    const double eta = model.linear_predictor(x);
    if (model.scale == ParticipationScale::Sample)
    {
        // {1 + [Pr(S=0|X,D=1) / Pr(S=1|X,D=1)] / c}^-1
        const double inverse_sample_odds = std::exp(-eta);
        return 1.0 / (1.0 + inverse_sample_odds / design.sampling_probability(x));
    }
    return detail::logistic(eta);
}

} // namespace transport
