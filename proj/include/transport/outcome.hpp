#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "transport/domain.hpp"
#include "transport/errors.hpp"

namespace transport {

struct OutcomeFitOptions
{
    //! Covariate indices entering the model; all covariates when empty.
    std::optional<std::vector<std::size_t>> columns;
};

//! Linear model for E[Y | X, S=1, A=a], one fit per arm.
struct OutcomeModel
{
    std::array<std::vector<double>, 2> coefficients; //!< intercept, then slopes
    std::array<double, 2> residual_variance{};
    std::array<std::size_t, 2> fit_size{};
    std::vector<std::size_t> columns;
};

inline double predict(const OutcomeModel& model, int a, std::span<const double> x)
{
    const auto& b = model.coefficients.at(static_cast<std::size_t>(a));
    double value = b[0];
    for (std::size_t j = 0; j < model.columns.size(); ++j)
        value += b[j + 1] * x[model.columns[j]];
    return value;
}

/*!
 * Per-arm ordinary least squares on trial rows (S=1, A=a) only.
 *
 * Solved by column-pivoting Householder QR; a numerically rank-deficient
 * design raises RankDeficient. Each arm needs at least q + 1 rows, where q
 * is the number of regression coefficients.
 */
inline OutcomeModel fit_outcome(const ObservedDataset& data, const OutcomeFitOptions& opts = {})
{
    OutcomeModel model;
    model.columns = detail::resolve_columns(opts.columns, data.dimension());
    const auto q = static_cast<Eigen::Index>(model.columns.size() + 1);

    for (int a = 0; a < 2; ++a)
    {
        const auto n = static_cast<Eigen::Index>(data.arm_count(a));
        if (n < q + 1)
            throw InsufficientData("outcome fit: arm " + std::to_string(a) + " has "
                                   + std::to_string(n) + " trial rows, needs "
                                   + std::to_string(q + 1));
        Eigen::MatrixXd z(n, q);
        Eigen::VectorXd y(n);
        Eigen::Index row = 0;
        for (const auto& rec : data.records())
        {
            const auto* t = std::get_if<TrialParticipant>(&rec);
            if (!t || t->a != a)
                continue;
            z(row, 0) = 1.0;
            for (std::size_t j = 0; j < model.columns.size(); ++j)
                z(row, static_cast<Eigen::Index>(j + 1)) = t->x[model.columns[j]];
            y[row] = t->y;
            ++row;
        }

        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(z);
        if (qr.rank() < q)
            throw RankDeficient("outcome fit: design for arm " + std::to_string(a)
                                + " is rank deficient");
        const Eigen::VectorXd b = qr.solve(y);
        const Eigen::VectorXd resid = y - z * b;

        const auto ua = static_cast<std::size_t>(a);
        model.coefficients[ua].assign(b.data(), b.data() + b.size());
        model.residual_variance[ua] = resid.squaredNorm() / static_cast<double>(n - q);
        model.fit_size[ua] = static_cast<std::size_t>(n);
    }
    return model;
}

} // namespace transport
