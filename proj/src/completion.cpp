#include "murl/completion.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

namespace murl {

long MaskedMatrix::observed() const {
    long n = 0;
    for (int j = 0; j < mask.cols(); ++j)
        for (int i = 0; i < mask.rows(); ++i)
            if (mask(i, j)) ++n;
    return n;
}

void MaskedMatrix::check() const {
    if (values.rows() != mask.rows() || values.cols() != mask.cols())
        throw std::invalid_argument("MaskedMatrix: values/mask shape mismatch");
    if (values.rows() == 0 || values.cols() == 0)
        throw std::invalid_argument("MaskedMatrix: empty matrix");
}

namespace {

double observed_max_abs_err(const MaskedMatrix& m, const Eigen::MatrixXd& x) {
    double worst = 0.0;
    for (int j = 0; j < m.cols(); ++j)
        for (int i = 0; i < m.rows(); ++i)
            if (m.mask(i, j)) worst = std::max(worst, std::abs(x(i, j) - m.values(i, j)));
    return worst;
}

// one ALS pass: rows of `left` are re-solved against the fixed `right` factor
void solve_factor(const MaskedMatrix& m, Eigen::MatrixXd& left, const Eigen::MatrixXd& right,
                  bool rows_of_m, double ridge) {
    const int n = rows_of_m ? m.rows() : m.cols();
    const int r = static_cast<int>(left.cols());
    for (int i = 0; i < n; ++i) {
        Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(r, r);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(r);
        bool any = false;
        const int other = rows_of_m ? m.cols() : m.rows();
        for (int j = 0; j < other; ++j) {
            const bool obs = rows_of_m ? m.mask(i, j) : m.mask(j, i);
            if (!obs) continue;
            const double y = rows_of_m ? m.values(i, j) : m.values(j, i);
            const Eigen::VectorXd f = right.row(j).transpose();
            gram.noalias() += f * f.transpose();
            rhs.noalias() += y * f;
            any = true;
        }
        if (!any) {
            left.row(i).setZero();
            continue;
        }
        gram.diagonal().array() += ridge * (1.0 + gram.trace());
        left.row(i) = gram.ldlt().solve(rhs).transpose();
    }
}

} // namespace

CompletionResult complete_fixed_rank(const MaskedMatrix& m, int rank, const CompletionOptions& opts) {
    m.check();
    if (rank < 0 || rank > std::min(m.rows(), m.cols()))
        throw std::invalid_argument("complete_fixed_rank: rank out of range");

    CompletionResult best;
    best.residual = std::numeric_limits<double>::infinity();

    if (rank == 0) {
        best.completed = Eigen::MatrixXd::Zero(m.rows(), m.cols());
        best.residual = observed_max_abs_err(m, best.completed);
        best.converged = best.residual <= opts.interp_tol;
        return best;
    }

    // spectral start: top factors of the zero-filled rescaled matrix
    const double rate = static_cast<double>(m.observed()) / (m.rows() * m.cols());
    Eigen::MatrixXd filled = Eigen::MatrixXd::Zero(m.rows(), m.cols());
    for (int j = 0; j < m.cols(); ++j)
        for (int i = 0; i < m.rows(); ++i)
            if (m.mask(i, j)) filled(i, j) = m.values(i, j) / std::max(rate, 1e-12);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd0(filled, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::MatrixXd u0 = svd0.matrixU().leftCols(rank) *
                               svd0.singularValues().head(rank).cwiseSqrt().asDiagonal();
    const Eigen::MatrixXd v0 = svd0.matrixV().leftCols(rank) *
                               svd0.singularValues().head(rank).cwiseSqrt().asDiagonal();
    const double u_scale = std::max(1e-12, u0.norm() / std::sqrt(static_cast<double>(u0.size())));
    const double v_scale = std::max(1e-12, v0.norm() / std::sqrt(static_cast<double>(v0.size())));

    RngStream root(opts.seed);
    for (int restart = 0; restart < opts.restarts; ++restart) {
        RngStream rng = root.child(static_cast<std::uint64_t>(restart));
        Eigen::MatrixXd u(m.rows(), rank), v(m.cols(), rank);
        if (restart == 0) {
            u = u0;
            v = v0;
        } else if (restart <= 3) {
            // jittered spectral start, widening with the restart index
            const double sigma = 0.25 * restart;
            u = u0;
            v = v0;
            for (int i = 0; i < u.rows(); ++i)
                for (int j = 0; j < rank; ++j) u(i, j) += sigma * u_scale * rng.normal();
            for (int i = 0; i < v.rows(); ++i)
                for (int j = 0; j < rank; ++j) v(i, j) += sigma * v_scale * rng.normal();
        } else {
            for (int i = 0; i < u.rows(); ++i)
                for (int j = 0; j < rank; ++j) u(i, j) = rng.normal();
            for (int i = 0; i < v.rows(); ++i)
                for (int j = 0; j < rank; ++j) v(i, j) = rng.normal();
        }

        double prev = std::numeric_limits<double>::infinity();
        int stall = 0;
        for (int it = 0; it < opts.max_iters; ++it) {
            solve_factor(m, u, v, true, opts.ridge);
            solve_factor(m, v, u, false, opts.ridge);
            const Eigen::MatrixXd x = u * v.transpose();
            const double res = observed_max_abs_err(m, x);
            if (res < best.residual) {
                best.residual = res;
                best.completed = x;
                best.iterations = it + 1;
                best.restarts_used = restart + 1;
            }
            if (res <= opts.interp_tol) {
                best.converged = true;
                return best;
            }
            stall = (res > 0.99999 * prev) ? stall + 1 : 0;
            if (stall >= 80) break;
            prev = res;
        }
    }
    best.converged = best.residual <= opts.interp_tol;
    return best;
}

CompletionResult complete_nuclear(const MaskedMatrix& m, const NuclearOptions& opts) {
    m.check();
    const long obs = m.observed();
    CompletionResult res;
    if (obs == 0) {
        res.completed = Eigen::MatrixXd::Zero(m.rows(), m.cols());
        res.converged = true;
        return res;
    }
    const double frac = static_cast<double>(obs) / (static_cast<double>(m.rows()) * m.cols());
    const double step = opts.step > 0.0 ? opts.step : 1.2 / frac;
    const double tau =
        opts.tau > 0.0 ? opts.tau : 5.0 * std::sqrt(static_cast<double>(m.rows()) * m.cols());

    double obs_norm = 0.0;
    for (int j = 0; j < m.cols(); ++j)
        for (int i = 0; i < m.rows(); ++i)
            if (m.mask(i, j)) obs_norm += m.values(i, j) * m.values(i, j);
    obs_norm = std::sqrt(obs_norm);
    if (obs_norm == 0.0) {
        res.completed = Eigen::MatrixXd::Zero(m.rows(), m.cols());
        res.converged = true;
        return res;
    }

    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(m.rows(), m.cols());
    Eigen::MatrixXd x = y;
    double prev_rel = std::numeric_limits<double>::infinity();
    int rises = 0;
    for (int it = 0; it < opts.max_iters; ++it) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(y, Eigen::ComputeThinU | Eigen::ComputeThinV);
        Eigen::VectorXd sv = svd.singularValues();
        for (int i = 0; i < sv.size(); ++i) sv[i] = std::max(0.0, sv[i] - tau);
        x = svd.matrixU() * sv.asDiagonal() * svd.matrixV().transpose();

        double err = 0.0;
        for (int j = 0; j < m.cols(); ++j)
            for (int i = 0; i < m.rows(); ++i)
                if (m.mask(i, j)) {
                    const double delta = m.values(i, j) - x(i, j);
                    err += delta * delta;
                    y(i, j) += step * delta;
                }
        const double rel = std::sqrt(err) / obs_norm;
        res.iterations = it + 1;
        if (rel <= opts.rel_tol) {
            res.completed = x;
            res.residual = rel;
            res.converged = true;
            return res;
        }
        rises = (rel > prev_rel) ? rises + 1 : 0;
        if (rises >= 10)
            throw CompletionDivergence("complete_nuclear: residual rose for 10 consecutive iterations (rel=" +
                                       std::to_string(rel) + ")");
        prev_rel = rel;
    }
    res.completed = x;
    res.residual = prev_rel;
    res.converged = false;
    return res;
}

std::vector<RecoveryCurvePoint> recovery_curve(int n1, int n2, int rank,
                                               const std::vector<double>& rates,
                                               int trials_per_rate, std::uint64_t seed,
                                               double success_tol,
                                               const CompletionOptions& opts) {
    if (n1 <= 0 || n2 <= 0 || rank <= 0 || rank > std::min(n1, n2))
        throw std::invalid_argument("recovery_curve: bad dimensions");
    std::vector<RecoveryCurvePoint> curve;
    RngStream root(seed);
    const long total = static_cast<long>(n1) * n2;
    for (std::size_t ri = 0; ri < rates.size(); ++ri) {
        const double rate = rates[ri];
        if (rate <= 0.0 || rate > 1.0) throw std::invalid_argument("recovery_curve: rate out of (0,1]");
        RecoveryCurvePoint pt;
        pt.rate = rate;
        pt.trials = trials_per_rate;
        std::vector<double> errs;
        for (int trial = 0; trial < trials_per_rate; ++trial) {
            RngStream rng = root.child(ri).child(static_cast<std::uint64_t>(trial));
            // planted incoherent rank-r matrix scaled to [0,1]
            Eigen::MatrixXd truth;
            if (rank == 1) {
                Eigen::VectorXd u(n1), v(n2);
                for (int i = 0; i < n1; ++i) u[i] = 0.25 + 0.75 * rng.uniform();
                for (int j = 0; j < n2; ++j) v[j] = 0.25 + 0.75 * rng.uniform();
                truth = u * v.transpose();
                truth /= truth.maxCoeff();
            } else {
                Eigen::MatrixXd a(n1, rank - 1), b(n2, rank - 1);
                for (int i = 0; i < n1; ++i)
                    for (int j = 0; j < rank - 1; ++j) a(i, j) = rng.normal();
                for (int i = 0; i < n2; ++i)
                    for (int j = 0; j < rank - 1; ++j) b(i, j) = rng.normal();
                truth = a * b.transpose();
                truth = (truth.array() - truth.minCoeff()) / (truth.maxCoeff() - truth.minCoeff());
            }

            std::vector<long> cells(total);
            for (long i = 0; i < total; ++i) cells[i] = i;
            const long keep = std::max<long>(1, std::lround(rate * static_cast<double>(total)));
            for (long i = 0; i < keep; ++i) {
                const long j = i + static_cast<long>(rng.uniform_int(static_cast<std::uint64_t>(total - i)));
                std::swap(cells[i], cells[j]);
            }
            MaskedMatrix masked;
            masked.values = Eigen::MatrixXd::Zero(n1, n2);
            masked.mask.setConstant(n1, n2, false);
            for (long i = 0; i < keep; ++i) {
                const int row = static_cast<int>(cells[i] / n2);
                const int col = static_cast<int>(cells[i] % n2);
                masked.mask(row, col) = true;
                masked.values(row, col) = truth(row, col);
            }

            CompletionOptions local = opts;
            local.seed = rng.child("als").key();
            const CompletionResult cr = complete_fixed_rank(masked, rank, local);
            const double err = (cr.completed - truth).array().abs().maxCoeff();
            errs.push_back(err);
            if (cr.converged && err <= success_tol) ++pt.successes;
        }
        std::sort(errs.begin(), errs.end());
        pt.median_max_err = errs.empty() ? 0.0
                            : (errs.size() % 2 == 1
                                   ? errs[errs.size() / 2]
                                   : 0.5 * (errs[errs.size() / 2 - 1] + errs[errs.size() / 2]));
        curve.push_back(pt);
    }
    return curve;
}

} // namespace murl
