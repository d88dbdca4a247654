#include "murl/mdp.hpp"

#include <stdexcept>
#include <string>

namespace murl {

namespace detail {

void require_stochastic_rows(Eigen::MatrixXd& m, const char* what, double tol) {
    for (int i = 0; i < m.rows(); ++i) {
        double sum = 0.0;
        for (int j = 0; j < m.cols(); ++j) {
            if (m(i, j) < -tol)
                throw std::invalid_argument(std::string(what) + ": negative entry in row " + std::to_string(i));
            if (m(i, j) < 0.0) m(i, j) = 0.0;
            sum += m(i, j);
        }
        if (std::abs(sum - 1.0) > tol)
            throw std::invalid_argument(std::string(what) + ": row " + std::to_string(i) +
                                        " sums to " + std::to_string(sum));
        // skip near-exact sums so that construction is idempotent bit-for-bit
        if (std::abs(sum - 1.0) > 1e-12) m.row(i) /= sum;
    }
}

namespace {

void require_vector_dist(Eigen::VectorXd& v, const char* what, double tol = 1e-9) {
    double sum = 0.0;
    for (int i = 0; i < v.size(); ++i) {
        if (v[i] < -tol)
            throw std::invalid_argument(std::string(what) + ": negative entry");
        if (v[i] < 0.0) v[i] = 0.0;
        sum += v[i];
    }
    if (std::abs(sum - 1.0) > tol)
        throw std::invalid_argument(std::string(what) + ": mass sums to " + std::to_string(sum));
    if (std::abs(sum - 1.0) > 1e-12) v /= sum;
}

} // namespace
} // namespace detail

TabularMdp::TabularMdp(int s, int a, int h,
                       std::vector<Eigen::MatrixXd> trans,
                       Eigen::VectorXd init)
    : num_states(s), num_actions(a), horizon(h),
      transitions(std::move(trans)), init_dist(std::move(init)) {
    if (s <= 0 || a <= 0 || h <= 0)
        throw std::invalid_argument("TabularMdp: dimensions must be positive");
    if (static_cast<int>(transitions.size()) != h - 1)
        throw std::invalid_argument("TabularMdp: expected horizon-1 transition matrices");
    if (init_dist.size() != s)
        throw std::invalid_argument("TabularMdp: init_dist length mismatch");
    for (auto& t : transitions) {
        if (t.rows() != static_cast<long>(s) * a || t.cols() != s)
            throw std::invalid_argument("TabularMdp: transition matrix shape mismatch");
        detail::require_stochastic_rows(t, "TabularMdp transition");
    }
    detail::require_vector_dist(init_dist, "TabularMdp init_dist");
}

RewardFunction::RewardFunction(std::vector<Eigen::MatrixXd> vals) : values(std::move(vals)) {
    for (const auto& v : values) {
        if ((v.array() < -1e-9).any() || (v.array() > 1.0 + 1e-9).any())
            throw std::invalid_argument("RewardFunction: entries must lie in [0,1]");
    }
    for (auto& v : values) v = v.array().max(0.0).min(1.0);
}

TabularPolicy::TabularPolicy(std::vector<Eigen::MatrixXd> ks) : kernels(std::move(ks)) {
    for (auto& k : kernels) detail::require_stochastic_rows(k, "TabularPolicy kernel");
}

TabularPolicy uniform_policy(int num_states, int num_actions, int horizon) {
    std::vector<Eigen::MatrixXd> ks(
        horizon, Eigen::MatrixXd::Constant(num_states, num_actions, 1.0 / num_actions));
    TabularPolicy p;
    p.kernels = std::move(ks);
    return p;
}

namespace {

void check_policy_shape(const TabularMdp& mdp, const TabularPolicy& policy) {
    if (static_cast<int>(policy.kernels.size()) != mdp.horizon)
        throw std::invalid_argument("policy horizon mismatch");
    for (const auto& k : policy.kernels)
        if (k.rows() != mdp.num_states || k.cols() != mdp.num_actions)
            throw std::invalid_argument("policy kernel shape mismatch");
}

void check_reward_shape(const TabularMdp& mdp, const RewardFunction& reward) {
    if (static_cast<int>(reward.values.size()) != mdp.horizon)
        throw std::invalid_argument("reward horizon mismatch");
    for (const auto& v : reward.values)
        if (v.rows() != mdp.num_states || v.cols() != mdp.num_actions)
            throw std::invalid_argument("reward table shape mismatch");
}

} // namespace

Trajectory sample_pair_path(const TabularMdp& mdp, const TabularPolicy& policy, RngStream& rng) {
    check_policy_shape(mdp, policy);
    Trajectory traj;
    traj.states.resize(mdp.horizon);
    traj.actions.resize(mdp.horizon);
    int s = rng.categorical(mdp.init_dist);
    for (int h = 0; h < mdp.horizon; ++h) {
        const int a = rng.categorical(policy.kernels[h].row(s).transpose());
        traj.states[h] = s;
        traj.actions[h] = a;
        if (h + 1 < mdp.horizon)
            s = rng.categorical(mdp.transitions[h].row(mdp.pair_index(s, a)).transpose());
    }
    return traj;
}

Trajectory sample_trajectory(const TabularMdp& mdp, const TabularPolicy& policy,
                             const RewardFunction& reward, RngStream& rng) {
    check_reward_shape(mdp, reward);
    Trajectory traj = sample_pair_path(mdp, policy, rng);
    traj.rewards.resize(mdp.horizon);
    for (int h = 0; h < mdp.horizon; ++h)
        traj.rewards[h] = reward.values[h](traj.states[h], traj.actions[h]);
    return traj;
}

OccupancyProfile occupancy(const TabularMdp& mdp, const TabularPolicy& policy) {
    check_policy_shape(mdp, policy);
    OccupancyProfile prof;
    prof.pair_dist.reserve(mdp.horizon);
    Eigen::VectorXd state_dist = mdp.init_dist;
    for (int h = 0; h < mdp.horizon; ++h) {
        Eigen::MatrixXd d = policy.kernels[h].array().colwise() * state_dist.array();
        if (h + 1 < mdp.horizon) {
            Eigen::VectorXd next = Eigen::VectorXd::Zero(mdp.num_states);
            for (int s = 0; s < mdp.num_states; ++s)
                for (int a = 0; a < mdp.num_actions; ++a)
                    next.noalias() += d(s, a) * mdp.transitions[h].row(mdp.pair_index(s, a)).transpose();
            state_dist = std::move(next);
        }
        prof.pair_dist.push_back(std::move(d));
    }
    return prof;
}

double exact_value(const TabularMdp& mdp, const TabularPolicy& policy,
                   const RewardFunction& reward) {
    check_reward_shape(mdp, reward);
    const OccupancyProfile prof = occupancy(mdp, policy);
    double value = 0.0;
    for (int h = 0; h < mdp.horizon; ++h)
        value += (prof.pair_dist[h].array() * reward.values[h].array()).sum();
    return value;
}

PlanResult optimal_policy(const TabularMdp& mdp, const RewardFunction& reward) {
    check_reward_shape(mdp, reward);
    const int S = mdp.num_states;
    const int A = mdp.num_actions;
    Eigen::VectorXd v_next = Eigen::VectorXd::Zero(S);
    std::vector<Eigen::MatrixXd> kernels(mdp.horizon, Eigen::MatrixXd::Zero(S, A));
    for (int h = mdp.horizon - 1; h >= 0; --h) {
        Eigen::VectorXd v_here(S);
        for (int s = 0; s < S; ++s) {
            int best_a = 0;
            double best_q = -1.0;
            for (int a = 0; a < A; ++a) {
                double q = reward.values[h](s, a);
                if (h + 1 < mdp.horizon)
                    q += mdp.transitions[h].row(mdp.pair_index(s, a)).dot(v_next);
                if (q > best_q + 1e-15) {
                    best_q = q;
                    best_a = a;
                }
            }
            kernels[h](s, best_a) = 1.0;
            v_here[s] = best_q;
        }
        v_next = std::move(v_here);
    }
    PlanResult res;
    res.policy.kernels = std::move(kernels);
    res.value = mdp.init_dist.dot(v_next);
    return res;
}

} // namespace murl
