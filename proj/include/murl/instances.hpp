#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "murl/mdp.hpp"
#include "murl/rng.hpp"

namespace murl {

struct GenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Per-user deterministic rewards, one N x (S*A) matrix per step, rank <= rank_bound.
// entry() is the audited access path used by samplers; tests read access_count.
struct RewardMatrixSet {
    int num_users = 0;
    int rank_bound = 0;
    std::vector<Eigen::MatrixXd> matrices; // H matrices, N x (S*A), entries in [0,1]
    mutable std::uint64_t access_count = 0;

    double entry(int h, int user, int pair) const {
        ++access_count;
        return matrices[h](user, pair);
    }

    RewardFunction user_rewards(int user, int num_states, int num_actions) const;
};

struct CoherenceReport {
    int rank = 0;
    double mu_row = 0.0; // left-factor coherence, maximized over row indices
    double mu_col = 0.0; // right-factor coherence, maximized over column indices
    double mu0 = 0.0;    // max of the two
    double mu1 = 0.0;    // scaled sup-norm of U V^T
};

struct TabularInstance {
    TabularMdp mdp;
    RewardMatrixSet rewards;
    std::vector<CoherenceReport> coherence; // per step
    std::uint64_t seed = 0;
    std::vector<int> redundant_states; // states with damped inbound probability
};

struct TabularGenParams {
    int num_users = 0;
    int num_states = 0;
    int num_actions = 0;
    int horizon = 0;
    int rank = 0;
    double coherence_target = 3.0;
    int max_redraws = 50;
    double redundant_fraction = 0.0; // fraction of states made hard to reach
};

// Feature-factored dynamics over a finite state space.
// phi rows are nonnegative with unit l1 norm, psi rows have l2 norm <= 1,
// mu[h] rows are probability measures, so P_h = phi * mu[h] is row-stochastic.
struct LinearMdpSpec {
    int feature_dim = 0;
    Eigen::MatrixXd phi;                // (S*A) x d
    Eigen::MatrixXd psi;                // (S*A) x d
    std::vector<Eigen::MatrixXd> mu;    // H-1 matrices, d x S
    Eigen::VectorXd init_dist;          // S

    void validate(int num_states, int num_actions, int horizon) const;
};

struct LinearInstance {
    TabularMdp mdp;
    LinearMdpSpec features;
    std::vector<Eigen::MatrixXd> theta; // H matrices, N x d, rank <= rank_bound
    RewardMatrixSet rewards;            // theta * psi^T, materialized
    int rank_bound = 0;
    std::uint64_t seed = 0;
    // populated when the generator plants an unreachable feature direction
    std::optional<Eigen::VectorXd> planted_deficient_direction;
};

struct LinearGenParams {
    int num_users = 0;
    int feature_dim = 0;
    int num_states = 0;
    int num_actions = 0;
    int horizon = 0;
    int rank = 0;
    bool plant_deficient_direction = false;
    double color_weight = 0.8;  // weight on the one-hot component of phi
    double psi_offset = 0.5;    // constant coordinate reserved for reward range
    double psi_radius = 0.8;    // magnitude of the +-axis tiles in the rest of psi
    int max_redraws = 50;
};

TabularInstance gen_tabular_instance(const TabularGenParams& params, std::uint64_t seed);

LinearInstance gen_linear_instance(const LinearGenParams& params, std::uint64_t seed);

// Subspace coherence of the best rank-r approximation spaces of m.
CoherenceReport coherence(const Eigen::MatrixXd& m, int rank);

// Dirichlet(alpha,...,alpha) draw for integer alpha via sums of exponentials.
Eigen::VectorXd dirichlet(RngStream& rng, int n, int alpha);

} // namespace murl
