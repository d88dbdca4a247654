#include "murl/instances.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/SVD>

namespace murl {

namespace {

Eigen::MatrixXd gaussian_matrix(RngStream& rng, int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
    return m;
}

void clamp_unit_interval(Eigen::MatrixXd& m, const char* what, double tol = 1e-9) {
    if ((m.array() < -tol).any() || (m.array() > 1.0 + tol).any())
        throw GenerationError(std::string(what) + ": entries escaped [0,1]");
    m = m.array().max(0.0).min(1.0);
}

// singular-value count above a relative threshold
int numerical_rank(const Eigen::MatrixXd& m, double rel_tol = 1e-9) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv[0] <= 0.0) return 0;
    int r = 0;
    for (int i = 0; i < sv.size(); ++i)
        if (sv[i] > rel_tol * sv[0]) ++r;
    return r;
}

} // namespace

Eigen::VectorXd dirichlet(RngStream& rng, int n, int alpha) {
    if (n <= 0 || alpha <= 0) throw std::invalid_argument("dirichlet: bad arguments");
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) {
        double g = 0.0;
        for (int k = 0; k < alpha; ++k) {
            double u = rng.uniform();
            while (u <= 0.0) u = rng.uniform();
            g -= std::log(u);
        }
        v[i] = g;
    }
    v /= v.sum();
    return v;
}

RewardFunction RewardMatrixSet::user_rewards(int user, int num_states, int num_actions) const {
    std::vector<Eigen::MatrixXd> vals;
    vals.reserve(matrices.size());
    for (const auto& m : matrices) {
        Eigen::MatrixXd t(num_states, num_actions);
        for (int s = 0; s < num_states; ++s)
            for (int a = 0; a < num_actions; ++a) t(s, a) = m(user, s * num_actions + a);
        vals.push_back(std::move(t));
    }
    return RewardFunction(std::move(vals));
}

CoherenceReport coherence(const Eigen::MatrixXd& m, int rank) {
    if (rank <= 0 || rank > std::min(m.rows(), m.cols()))
        throw std::invalid_argument("coherence: rank out of range");
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.singularValues()[0] <= 0.0)
        throw std::invalid_argument("coherence: zero matrix");
    const Eigen::MatrixXd u = svd.matrixU().leftCols(rank);
    const Eigen::MatrixXd v = svd.matrixV().leftCols(rank);
    const double n1 = static_cast<double>(m.rows());
    const double n2 = static_cast<double>(m.cols());
    CoherenceReport rep;
    rep.rank = rank;
    rep.mu_row = n1 / rank * u.rowwise().squaredNorm().maxCoeff();
    rep.mu_col = n2 / rank * v.rowwise().squaredNorm().maxCoeff();
    rep.mu0 = std::max(rep.mu_row, rep.mu_col);
    rep.mu1 = (u * v.transpose()).array().abs().maxCoeff() * std::sqrt(n1 * n2 / rank);
    return rep;
}

namespace {

// Rank-r matrix with entries exactly spanning [0,1]: a rank-(r-1) Gaussian
// product plus the rank-1 shift introduced by affine rescaling. spike_weight
// concentrates factor mass on single rows to push coherence up when the
// target asks for it.
Eigen::MatrixXd random_low_rank_unit(RngStream& rng, int n1, int n2, int r, double spike_weight) {
    if (r == 1) {
        Eigen::VectorXd u(n1), v(n2);
        for (int i = 0; i < n1; ++i) u[i] = 0.25 + 0.75 * rng.uniform();
        for (int j = 0; j < n2; ++j) v[j] = 0.25 + 0.75 * rng.uniform();
        Eigen::MatrixXd m = u * v.transpose();
        m /= m.maxCoeff();
        return m;
    }
    Eigen::MatrixXd u0 = gaussian_matrix(rng, n1, r - 1);
    Eigen::MatrixXd v0 = gaussian_matrix(rng, n2, r - 1);
    if (spike_weight > 0.0) {
        const int i = rng.index(n1);
        const int j = rng.index(n2);
        u0.row(i) *= 1.0 + spike_weight * std::sqrt(static_cast<double>(n1));
        v0.row(j) *= 1.0 + spike_weight * std::sqrt(static_cast<double>(n2));
    }
    Eigen::MatrixXd g = u0 * v0.transpose();
    const double lo = g.minCoeff();
    const double hi = g.maxCoeff();
    if (hi - lo <= 0.0) throw GenerationError("degenerate low-rank draw");
    return (g.array() - lo) / (hi - lo);
}

} // namespace

TabularInstance gen_tabular_instance(const TabularGenParams& p, std::uint64_t seed) {
    if (p.num_users <= 0 || p.num_states <= 0 || p.num_actions <= 0 || p.horizon <= 0)
        throw std::invalid_argument("gen_tabular_instance: dimensions must be positive");
    const int pairs = p.num_states * p.num_actions;
    if (p.rank < 1 || 2 * p.rank > std::min(p.num_users, pairs))
        throw std::invalid_argument(
            "gen_tabular_instance: rank must satisfy 1 <= r and 2r <= min(num_users, "
            "num_states*num_actions)");
    if (p.redundant_fraction < 0.0 || p.redundant_fraction >= 1.0)
        throw std::invalid_argument("gen_tabular_instance: redundant_fraction outside [0,1)");

    RngStream root(seed);
    RngStream dyn = root.child("dynamics");

    std::vector<Eigen::MatrixXd> trans;
    for (int h = 0; h + 1 < p.horizon; ++h) {
        Eigen::MatrixXd t(pairs, p.num_states);
        RngStream hs = dyn.child(static_cast<std::uint64_t>(h));
        for (int row = 0; row < pairs; ++row)
            t.row(row) = dirichlet(hs, p.num_states, 1).transpose();
        trans.push_back(std::move(t));
    }
    RngStream init_rng = root.child("init");
    Eigen::VectorXd init = dirichlet(init_rng, p.num_states, 1);

    // hard-to-reach states keep tiny inbound mass so every row stays stochastic
    std::vector<int> redundant;
    const int n_red = static_cast<int>(p.redundant_fraction * p.num_states);
    if (n_red > 0) {
        RngStream red_rng = root.child("redundant");
        std::vector<int> order(p.num_states);
        for (int s = 0; s < p.num_states; ++s) order[s] = s;
        for (int s = p.num_states - 1; s > 0; --s)
            std::swap(order[s], order[red_rng.index(s + 1)]);
        redundant.assign(order.begin(), order.begin() + n_red);
        std::sort(redundant.begin(), redundant.end());
        const double damp = 1e-7;
        for (auto& t : trans) {
            for (int s : redundant) t.col(s) *= damp;
            for (int row = 0; row < t.rows(); ++row) t.row(row) /= t.row(row).sum();
        }
        for (int s : redundant) init[s] *= damp;
        init /= init.sum();
    }
    TabularMdp mdp(p.num_states, p.num_actions, p.horizon, std::move(trans), std::move(init));

    RewardMatrixSet rewards;
    rewards.num_users = p.num_users;
    rewards.rank_bound = p.rank;
    std::vector<CoherenceReport> reports;
    RngStream rew = root.child("rewards");
    for (int h = 0; h < p.horizon; ++h) {
        RngStream hs = rew.child(static_cast<std::uint64_t>(h));
        bool accepted = false;
        for (int attempt = 0; attempt < p.max_redraws && !accepted; ++attempt) {
            RngStream draw = hs.child(static_cast<std::uint64_t>(attempt));
            // ramp the spike only once incoherent draws keep undershooting
            const double base_mu = 1.0 + std::log(static_cast<double>(std::max(p.num_users, pairs)));
            const double spike = (p.coherence_target > base_mu)
                                     ? std::min(0.9, 0.1 * attempt)
                                     : 0.0;
            Eigen::MatrixXd m = random_low_rank_unit(draw, p.num_users, pairs, p.rank, spike);
            if (numerical_rank(m) != p.rank) continue;
            CoherenceReport rep = coherence(m, p.rank);
            if (rep.mu0 > 2.0 * p.coherence_target || rep.mu0 < 0.5 * p.coherence_target) continue;
            clamp_unit_interval(m, "reward matrix");
            rewards.matrices.push_back(std::move(m));
            reports.push_back(rep);
            accepted = true;
        }
        if (!accepted)
            throw GenerationError("gen_tabular_instance: coherence target " +
                                  std::to_string(p.coherence_target) +
                                  " unreachable at step " + std::to_string(h));
    }

    TabularInstance inst;
    inst.mdp = std::move(mdp);
    inst.rewards = std::move(rewards);
    inst.coherence = std::move(reports);
    inst.seed = seed;
    inst.redundant_states = std::move(redundant);
    return inst;
}

void LinearMdpSpec::validate(int num_states, int num_actions, int horizon) const {
    const int pairs = num_states * num_actions;
    if (phi.rows() != pairs || phi.cols() != feature_dim)
        throw std::invalid_argument("LinearMdpSpec: phi shape mismatch");
    if (psi.rows() != pairs || psi.cols() != feature_dim)
        throw std::invalid_argument("LinearMdpSpec: psi shape mismatch");
    if (static_cast<int>(mu.size()) != horizon - 1)
        throw std::invalid_argument("LinearMdpSpec: expected horizon-1 mu matrices");
    if ((phi.array() < -1e-9).any())
        throw std::invalid_argument("LinearMdpSpec: phi must be nonnegative");
    for (int i = 0; i < phi.rows(); ++i)
        if (phi.row(i).sum() > 1.0 + 1e-9)
            throw std::invalid_argument("LinearMdpSpec: phi row l1 norm exceeds 1");
    for (int i = 0; i < psi.rows(); ++i)
        if (psi.row(i).norm() > 1.0 + 1e-9)
            throw std::invalid_argument("LinearMdpSpec: psi row l2 norm exceeds 1");
    for (const auto& m : mu) {
        if (m.rows() != feature_dim || m.cols() != num_states)
            throw std::invalid_argument("LinearMdpSpec: mu shape mismatch");
        for (int i = 0; i < m.rows(); ++i) {
            if ((m.row(i).array() < -1e-9).any() || std::abs(m.row(i).sum() - 1.0) > 1e-9)
                throw std::invalid_argument("LinearMdpSpec: mu row is not a probability measure");
        }
    }
    if (init_dist.size() != num_states)
        throw std::invalid_argument("LinearMdpSpec: init_dist length mismatch");
}

LinearInstance gen_linear_instance(const LinearGenParams& p, std::uint64_t seed) {
    if (p.num_users <= 0 || p.feature_dim < 2 || p.num_states <= 0 || p.num_actions <= 0 ||
        p.horizon <= 0)
        throw std::invalid_argument("gen_linear_instance: bad dimensions");
    if (p.rank < 1 || 2 * p.rank > std::min(p.num_users, p.feature_dim))
        throw std::invalid_argument("gen_linear_instance: need 1 <= rank <= min(N,d)/2");
    const int d = p.feature_dim;
    const int pairs = p.num_states * p.num_actions;
    const int d_active = p.plant_deficient_direction ? d - 1 : d;
    if (d_active < 2) throw std::invalid_argument("gen_linear_instance: feature_dim too small");

    RngStream root(seed);

    RngStream phi_rng = root.child("phi");
    Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(pairs, d);
    for (int row = 0; row < pairs; ++row) {
        const int color = row % d_active;
        Eigen::VectorXd mix = dirichlet(phi_rng, d_active, 1);
        for (int j = 0; j < d_active; ++j) phi(row, j) = (1.0 - p.color_weight) * mix[j];
        phi(row, color) += p.color_weight;
    }

    const double b = p.psi_offset;
    const double c = p.psi_radius;
    if (b <= 0.0 || c <= 0.0 || b * b + c * c > 1.0 + 1e-12)
        throw std::invalid_argument("gen_linear_instance: psi geometry out of the unit ball");
    Eigen::MatrixXd psi = Eigen::MatrixXd::Zero(pairs, d);
    const int tiles = 2 * (d - 1);
    for (int row = 0; row < pairs; ++row) {
        psi(row, 0) = b;
        const int j = row % tiles;
        const int coord = 1 + j % (d - 1);
        const double sign = (j < d - 1) ? 1.0 : -1.0;
        psi(row, coord) = sign * c;
    }

    RngStream mu_rng = root.child("mu");
    std::vector<Eigen::MatrixXd> mu;
    std::vector<Eigen::MatrixXd> trans;
    for (int h = 0; h + 1 < p.horizon; ++h) {
        Eigen::MatrixXd m(d, p.num_states);
        RngStream hs = mu_rng.child(static_cast<std::uint64_t>(h));
        for (int i = 0; i < d; ++i) m.row(i) = dirichlet(hs, p.num_states, 5).transpose();
        trans.push_back(phi * m);
        mu.push_back(std::move(m));
    }
    RngStream init_rng = root.child("init");
    Eigen::VectorXd init = dirichlet(init_rng, p.num_states, 5);

    RngStream th = root.child("theta");
    std::vector<Eigen::MatrixXd> theta;
    RewardMatrixSet rewards;
    rewards.num_users = p.num_users;
    rewards.rank_bound = p.rank;
    for (int h = 0; h < p.horizon; ++h) {
        RngStream hs = th.child(static_cast<std::uint64_t>(h));
        bool accepted = false;
        for (int attempt = 0; attempt < p.max_redraws && !accepted; ++attempt) {
            RngStream draw = hs.child(static_cast<std::uint64_t>(attempt));
            Eigen::MatrixXd tilde;
            if (p.rank == 1) {
                Eigen::VectorXd w = gaussian_matrix(draw, d - 1, 1);
                tilde = Eigen::VectorXd::Ones(p.num_users) * w.transpose();
            } else {
                tilde = gaussian_matrix(draw, p.num_users, p.rank - 1) *
                        gaussian_matrix(draw, p.rank - 1, d - 1);
            }
            const double max_row = tilde.rowwise().norm().maxCoeff();
            if (max_row <= 0.0) continue;
            tilde *= 0.5 / (c * max_row);
            Eigen::MatrixXd t(p.num_users, d);
            t.col(0).setOnes();
            t.rightCols(d - 1) = tilde;
            if (numerical_rank(t) != p.rank) continue;
            // reward = b + <tilde, psi tail>, centered at 1/2 with excursion <= 1/2
            Eigen::MatrixXd r = t * psi.transpose();
            clamp_unit_interval(r, "linear reward matrix");
            theta.push_back(std::move(t));
            rewards.matrices.push_back(std::move(r));
            accepted = true;
        }
        if (!accepted) throw GenerationError("gen_linear_instance: rank draw failed");
    }

    LinearInstance inst;
    inst.features.feature_dim = d;
    inst.features.phi = std::move(phi);
    inst.features.psi = std::move(psi);
    inst.features.mu = std::move(mu);
    inst.features.init_dist = init;
    inst.features.validate(p.num_states, p.num_actions, p.horizon);
    inst.mdp = TabularMdp(p.num_states, p.num_actions, p.horizon, std::move(trans), init);
    inst.theta = std::move(theta);
    inst.rewards = std::move(rewards);
    inst.rank_bound = p.rank;
    inst.seed = seed;
    if (p.plant_deficient_direction) {
        Eigen::VectorXd dir = Eigen::VectorXd::Zero(d);
        dir[d - 1] = 1.0;
        inst.planted_deficient_direction = dir;
    }
    return inst;
}

} // namespace murl
