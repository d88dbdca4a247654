#include "murl/rowwise.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace murl {

long kt_schedule(int unknown, int d, int r, double zeta, double xi, double delta, int num_rows,
                 double c) {
    if (unknown <= 0 || d <= 0 || r <= 0 || num_rows < 2)
        throw std::invalid_argument("kt_schedule: bad dimensions");
    if (zeta <= 0.0 || xi <= 0.0 || delta <= 0.0 || delta >= 1.0)
        throw std::invalid_argument("kt_schedule: zeta, xi positive and delta in (0,1) required");
    const double zx = zeta * zeta * xi * xi;
    const double main_term =
        c * (static_cast<double>(r) * unknown + static_cast<double>(d) * r) / zx *
        std::log(d / (zeta * xi));
    const double tail_term = c * std::log(std::log(static_cast<double>(num_rows)) / delta) / zx;
    return static_cast<long>(std::ceil((main_term + tail_term) / unknown));
}

namespace {

double mean_loss(const std::vector<RowMeasurements>& rows, const Eigen::MatrixXd& theta) {
    double loss = 0.0;
    long count = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Eigen::VectorXd pred = rows[i].psis * theta.row(static_cast<int>(i)).transpose();
        loss += (pred - rows[i].vals).squaredNorm();
        count += rows[i].vals.size();
    }
    return count > 0 ? loss / static_cast<double>(count) : 0.0;
}

} // namespace

Eigen::MatrixXd fit_rank_r_zero_loss(const std::vector<RowMeasurements>& rows, int rank,
                                     const RowwiseConfig& cfg, RngStream rng) {
    const int n = static_cast<int>(rows.size());
    if (n == 0) throw std::invalid_argument("fit_rank_r_zero_loss: no rows");
    const int d = static_cast<int>(rows[0].psis.cols());
    for (const auto& row : rows) {
        if (row.psis.cols() != d || row.psis.rows() != row.vals.size())
            throw std::invalid_argument("fit_rank_r_zero_loss: measurement shape mismatch");
        if (row.vals.size() == 0)
            throw std::invalid_argument("fit_rank_r_zero_loss: empty measurement set");
    }
    if (rank <= 0 || rank > std::min(n, d))
        throw std::invalid_argument("fit_rank_r_zero_loss: rank out of range");

    Eigen::MatrixXd best;
    double best_loss = std::numeric_limits<double>::infinity();
    for (int restart = 0; restart < cfg.restarts; ++restart) {
        RngStream rs = rng.child(static_cast<std::uint64_t>(restart));
        Eigen::MatrixXd b(d, rank);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < rank; ++j) b(i, j) = rs.normal();
        b = Eigen::HouseholderQR<Eigen::MatrixXd>(b).householderQ() *
            Eigen::MatrixXd::Identity(d, rank);
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, rank);

        double loss = std::numeric_limits<double>::infinity();
        for (int it = 0; it < cfg.als_iters; ++it) {
            // row weights against the fixed basis b
            for (int i = 0; i < n; ++i) {
                const Eigen::MatrixXd f = rows[i].psis * b; // K x r
                Eigen::MatrixXd gram = f.transpose() * f;
                gram.diagonal().array() += 1e-12 * (1.0 + gram.trace());
                a.row(i) = gram.ldlt().solve(f.transpose() * rows[i].vals).transpose();
            }
            // shared basis against the fixed weights
            Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d * rank, d * rank);
            Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d * rank);
            for (int i = 0; i < n; ++i) {
                for (int k = 0; k < rows[i].psis.rows(); ++k) {
                    Eigen::VectorXd v(d * rank);
                    for (int q = 0; q < rank; ++q)
                        v.segment(q * d, d) = a(i, q) * rows[i].psis.row(k).transpose();
                    gram.noalias() += v * v.transpose();
                    rhs.noalias() += rows[i].vals[k] * v;
                }
            }
            gram.diagonal().array() += 1e-12 * (1.0 + gram.trace());
            const Eigen::VectorXd vecb = gram.ldlt().solve(rhs);
            for (int q = 0; q < rank; ++q) b.col(q) = vecb.segment(q * d, d);

            const Eigen::MatrixXd theta = a * b.transpose();
            const double next = mean_loss(rows, theta);
            if (next <= cfg.fit_tol) return theta;
            if (next > loss * 0.9999 && it > 10) break;
            loss = next;
        }
        const Eigen::MatrixXd theta = a * b.transpose();
        const double final_loss = mean_loss(rows, theta);
        if (final_loss < best_loss) {
            best_loss = final_loss;
            best = theta;
        }
    }
    if (best_loss <= cfg.fit_tol) return best;
    throw FitError("fit_rank_r_zero_loss: residual loss " + std::to_string(best_loss) +
                       " after " + std::to_string(cfg.restarts) + " restarts",
                   best_loss);
}

RowwiseResult run_estimator(const MeasurementFn& oracle, const RowwiseConfig& cfg, RngStream rng) {
    if (cfg.num_rows < 2 || cfg.feature_dim <= 0 || cfg.rank <= 0)
        throw std::invalid_argument("run_estimator: bad dimensions");
    if (cfg.verify_k <= 0) throw std::invalid_argument("run_estimator: verify_k must be positive");

    RowwiseResult out;
    out.theta_hat = Eigen::MatrixXd::Zero(cfg.num_rows, cfg.feature_dim);
    std::vector<int> unknown(cfg.num_rows);
    for (int i = 0; i < cfg.num_rows; ++i) unknown[i] = i;

    const int cap = 2 * static_cast<int>(std::ceil(std::log2(static_cast<double>(cfg.num_rows)))) + 2;
    std::vector<double> shrink_factors;
    for (int t = 1; static_cast<int>(unknown.size()) > 0; ++t) {
        if (t > cap) {
            std::string factors;
            for (double f : shrink_factors) factors += " " + std::to_string(f);
            throw EstimatorStall("run_estimator: iteration cap " + std::to_string(cap) +
                                 " reached; shrink factors:" + factors);
        }
        RowwiseIteration it;
        it.unknown_before = static_cast<int>(unknown.size());
        it.kt = kt_schedule(it.unknown_before, cfg.feature_dim, cfg.rank, cfg.zeta, cfg.xi,
                            cfg.delta, cfg.num_rows, cfg.c);
        if (it.kt <= 0) throw std::invalid_argument("run_estimator: schedule yielded no samples");

        RngStream draw = rng.child("draw").child(static_cast<std::uint64_t>(t));
        std::vector<RowMeasurements> meas(unknown.size());
        for (std::size_t j = 0; j < unknown.size(); ++j) {
            RngStream rs = draw.child(static_cast<std::uint64_t>(unknown[j]));
            meas[j].psis.resize(it.kt, cfg.feature_dim);
            meas[j].vals.resize(it.kt);
            for (long k = 0; k < it.kt; ++k) {
                auto [psi, val] = oracle(unknown[j], rs);
                meas[j].psis.row(k) = psi.transpose();
                meas[j].vals[k] = val;
            }
            out.total_measurements += it.kt;
        }

        Eigen::MatrixXd fitted;
        bool have_fit = true;
        try {
            fitted = fit_rank_r_zero_loss(meas, cfg.rank, cfg,
                                          rng.child("fit").child(static_cast<std::uint64_t>(t)));
            it.fit_loss = mean_loss(meas, fitted);
        } catch (const FitError& err) {
            have_fit = false;
            it.fit_failed = true;
            it.fit_loss = err.loss;
        }

        std::vector<int> still_unknown;
        if (have_fit) {
            RngStream ver = rng.child("verify").child(static_cast<std::uint64_t>(t));
            for (std::size_t j = 0; j < unknown.size(); ++j) {
                RngStream rs = ver.child(static_cast<std::uint64_t>(unknown[j]));
                double err = 0.0;
                for (int k = 0; k < cfg.verify_k; ++k) {
                    auto [psi, val] = oracle(unknown[j], rs);
                    const double diff = fitted.row(static_cast<int>(j)).dot(psi) - val;
                    err += diff * diff;
                }
                out.total_measurements += cfg.verify_k;
                if (err <= cfg.verify_tol * cfg.verify_k) {
                    out.theta_hat.row(unknown[j]) = fitted.row(static_cast<int>(j));
                    ++it.verified;
                } else {
                    still_unknown.push_back(unknown[j]);
                }
            }
        } else {
            still_unknown = unknown;
        }
        shrink_factors.push_back(it.unknown_before > 0
                                     ? static_cast<double>(still_unknown.size()) / it.unknown_before
                                     : 0.0);
        out.iterations.push_back(it);
        unknown = std::move(still_unknown);
    }
    out.converged = true;
    return out;
}

std::pair<double, double> measure_dist_constants(
    const std::function<Eigen::VectorXd(RngStream&)>& sampler, int d, int trials,
    const std::vector<Eigen::VectorXd>& directions, RngStream rng) {
    if (trials <= 0 || directions.empty())
        throw std::invalid_argument("measure_dist_constants: need trials and directions");
    Eigen::MatrixXd second = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd mean_abs = Eigen::VectorXd::Zero(static_cast<int>(directions.size()));
    for (int t = 0; t < trials; ++t) {
        const Eigen::VectorXd psi = sampler(rng);
        if (psi.size() != d)
            throw std::invalid_argument("measure_dist_constants: sampler dimension mismatch");
        second.noalias() += psi * psi.transpose();
        for (std::size_t j = 0; j < directions.size(); ++j)
            mean_abs[static_cast<int>(j)] += std::abs(directions[j].dot(psi));
    }
    second /= static_cast<double>(trials);
    mean_abs /= static_cast<double>(trials);
    const double zeta_hat = std::sqrt(static_cast<double>(d)) * mean_abs.minCoeff();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(second);
    const double lmax = eig.eigenvalues().maxCoeff();
    const double xi_hat = lmax > 0.0 ? 1.0 / std::sqrt(static_cast<double>(d) * lmax) : 0.0;
    return {zeta_hat, xi_hat};
}

} // namespace murl
