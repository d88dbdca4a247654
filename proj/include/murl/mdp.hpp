#pragma once

#include <vector>

#include <Eigen/Dense>

#include "murl/rng.hpp"

namespace murl {

// Episodic finite-horizon MDP with time-indexed dynamics shared by all users.
// transitions[h] maps pair (s,a) -> distribution over next states, h in [0, H-2].
struct TabularMdp {
    int num_states = 0;
    int num_actions = 0;
    int horizon = 0;
    std::vector<Eigen::MatrixXd> transitions; // H-1 matrices, (S*A) x S, row-stochastic
    Eigen::VectorXd init_dist;                // length S

    TabularMdp() = default;
    TabularMdp(int s, int a, int h,
               std::vector<Eigen::MatrixXd> trans,
               Eigen::VectorXd init);

    int num_pairs() const { return num_states * num_actions; }
    int pair_index(int s, int a) const { return s * num_actions + a; }
};

// Deterministic per-step reward tables, entries in [0,1].
struct RewardFunction {
    std::vector<Eigen::MatrixXd> values; // H matrices, S x A

    RewardFunction() = default;
    explicit RewardFunction(std::vector<Eigen::MatrixXd> vals);
};

// Time-dependent stochastic policy; kernels[h] rows are action distributions.
struct TabularPolicy {
    std::vector<Eigen::MatrixXd> kernels; // H matrices, S x A, row-stochastic

    TabularPolicy() = default;
    explicit TabularPolicy(std::vector<Eigen::MatrixXd> ks);
};

struct Trajectory {
    std::vector<int> states;
    std::vector<int> actions;
    std::vector<double> rewards; // empty when sampled without a reward table
    int user = -1;
};

// Exact state-action visitation probabilities per step.
struct OccupancyProfile {
    std::vector<Eigen::MatrixXd> pair_dist; // H matrices, S x A, each sums to 1
};

struct PlanResult {
    TabularPolicy policy;
    double value = 0.0;
};

TabularPolicy uniform_policy(int num_states, int num_actions, int horizon);

// Rolls states/actions only; rewards stay empty so callers control reward access.
Trajectory sample_pair_path(const TabularMdp& mdp, const TabularPolicy& policy, RngStream& rng);

Trajectory sample_trajectory(const TabularMdp& mdp, const TabularPolicy& policy,
                             const RewardFunction& reward, RngStream& rng);

OccupancyProfile occupancy(const TabularMdp& mdp, const TabularPolicy& policy);

// Expected cumulative reward via the forward recursion, no sampling.
double exact_value(const TabularMdp& mdp, const TabularPolicy& policy,
                   const RewardFunction& reward);

// Backward induction; ties broken toward the lowest action index.
PlanResult optimal_policy(const TabularMdp& mdp, const RewardFunction& reward);

namespace detail {
// Checks nonnegativity and row sums within tol, then renormalizes rows exactly.
void require_stochastic_rows(Eigen::MatrixXd& m, const char* what, double tol = 1e-9);
}

} // namespace murl
