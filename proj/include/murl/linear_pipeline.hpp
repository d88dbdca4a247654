#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "murl/instances.hpp"
#include "murl/reward_free.hpp"
#include "murl/rowwise.hpp"
#include "murl/tabular_pipeline.hpp"

namespace murl {

// Log-linear policy in both feature maps: pi_h(a|s) prop exp(<phi,u_h> + <psi,v_h>).
struct SoftmaxPolicy {
    std::vector<Eigen::VectorXd> u; // per step
    std::vector<Eigen::VectorXd> v;

    TabularPolicy to_tabular(const LinearMdpSpec& features, int num_states,
                             int num_actions) const;
};

// Parameter radius keeping the policy class expressive at resolution eta:
// R = 2*d*H*c_mu*log(2*H*A/eta)/eta.
double softmax_radius(int d, int horizon, int num_actions, double eta, double c_mu = 1.0);

// Total-variation bound between two softmax kernels from parameter distance:
// (exp(2*du_l2 + 2*dv_linf) - 1) / 2.
double tv_upper_bound(double du_l2, double dv_linf);

struct PolicyNetEntry {
    Eigen::VectorXd u;
    Eigen::VectorXd v;
};

struct PolicyNet {
    double eta = 0.0;
    double radius = 0.0;
    std::vector<PolicyNetEntry> kernels; // entry 0 is always the zero pair
    double covering_radius = 0.0;        // max over probes of min-over-net tv_upper_bound
    double log_card_ratio = 0.0;         // log|net| / log(1/eta) for eta < 1
};

// Deterministic low-discrepancy net over the (u,v) parameter ball pair.
// eta >= 2 collapses to the single zero-parameter kernel.
PolicyNet build_policy_net(int d, double eta, double radius, int budget, int probes = 128);

// +-coordinate axes followed by `extra` deterministic unit vectors.
std::vector<Eigen::VectorXd> direction_set(int d, int extra);

// n-th point of the R_d Kronecker sequence pushed onto the unit sphere.
Eigen::VectorXd low_discrepancy_sphere(int d, int n);

struct GrammianBlock {
    Eigen::MatrixXd phis;         // T x d, features visited at this step
    std::vector<int> next_states; // successor state per episode
    std::vector<int> init_states; // first state per episode
    Eigen::MatrixXd grammian;     // phis^T phis
    double lambda_min = 0.0;
    Eigen::VectorXd min_direction;
    bool well_conditioned = false;
    long replans = 0;
};

struct GrammianData {
    std::vector<GrammianBlock> blocks; // one per step h in [0, H-2]
};

// Budget heuristic for the sampler: c * d * kappa_sq * log(1 + d * kappa_sq).
long grammian_t_bound(int d, double kappa_sq, double c = 8.0);

// Per step: roll T episodes, planning on the reward ||Q phi||^2 where Q
// projects onto the eigenspace of the running Grammian below kappa_sq,
// re-planning whenever that eigenspace is nonempty. Blocks report the final
// smallest eigenvalue and its direction instead of throwing.
GrammianData run_well_conditioned_sampler(const TabularMdp& mdp, const LinearMdpSpec& features,
                                          const RfModel& rf, double kappa_sq, long t_budget,
                                          RngStream rng);

// --- conditional-expectation estimators ---------------------------------
// g is a (S*A) x k table; columns are estimated independently.

Eigen::VectorXd t_exact_initial(const Eigen::MatrixXd& g, const Eigen::MatrixXd& pi,
                                const Eigen::VectorXd& init_dist, int num_actions);

// level j >= 2 with weight vector nu against the measures of step j-1
Eigen::VectorXd t_exact_step(const Eigen::MatrixXd& g, const Eigen::MatrixXd& pi,
                             const Eigen::MatrixXd& mu_prev, const Eigen::VectorXd& nu,
                             int num_actions);

Eigen::VectorXd t_hat_initial(const Eigen::MatrixXd& g, const Eigen::MatrixXd& pi,
                              const std::vector<int>& init_states, int num_actions);

Eigen::VectorXd alpha_weights(const GrammianBlock& block, const Eigen::VectorXd& nu);

Eigen::VectorXd t_hat_step(const Eigen::MatrixXd& g, const Eigen::MatrixXd& pi,
                           const GrammianBlock& block, const Eigen::VectorXd& nu,
                           int num_actions);

// Forward-greedy chain error: intermediate targets are the projected running
// estimates, so the returned value is projection slack plus the final l1 gap.
// The h=1 form is just ||T_hat_1(phi, pi_1) - nu||_1.
double e_hat(const std::vector<Eigen::MatrixXd>& step_kernels, const LinearMdpSpec& features,
             const GrammianData& data, const Eigen::VectorXd& nu, int level, int num_actions);

// f(s,a;x) = |<x,psi>|*sqrt(d) - xi*d*<x,psi>^2, bounded in [-xi*d, sqrt(d)].
double f_eval(const Eigen::VectorXd& x, const Eigen::VectorXd& psi, double xi);

struct PolicySearchResult {
    SoftmaxPolicy policy;        // searched prefix; steps past `level` are uniform
    double certified = 0.0;      // sup-inf estimate over the direction set
    Eigen::VectorXd nu;          // chain target used at this level (empty for level 1)
    double slack = 0.0;          // accumulated chain slack of the winning prefix
    int kernel_index = -1;       // net entry chosen for the level step
    std::vector<int> prefix_kernels;
};

struct SearchConfig {
    double xi = 0.25;
    int extra_directions = 512;
    double eta0 = 0.5;           // chain feasibility threshold
    double nu_resolution = 1e-3; // dedup grid for chain endpoints
    int beam_cap = 256;
};

// Maximizes the estimated worst-direction f mass at `level` (1-based) over
// (chain endpoint nu) x (net kernels), subject to the chain error <= eta0.
// Throws PhaseError when no endpoint is feasible.
PolicySearchResult policy_search_fh(int level, const GrammianData& data,
                                    const LinearMdpSpec& features, const PolicyNet& net,
                                    const SearchConfig& cfg, int num_states, int num_actions,
                                    int horizon);

// Worst-direction expected f mass of the exact step-`level` occupancy.
double j_functional(const TabularMdp& mdp, const LinearMdpSpec& features,
                    const TabularPolicy& policy, int level, double xi,
                    const std::vector<Eigen::VectorXd>& directions);

struct DistPropReport {
    bool pass = false;
    double direction_margin = 0.0;  // min_x sqrt(d) E|<psi,x>| / zeta
    double covariance_margin = 0.0; // 1 / (lambda_max(E psi psi^T) * d * xi^2)
    Eigen::VectorXd worst_direction;
};

DistPropReport dist_prop_check(const TabularMdp& mdp, const LinearMdpSpec& features,
                               const TabularPolicy& policy, int level, double zeta, double xi,
                               const std::vector<Eigen::VectorXd>& directions);

// Per-user planning on rewards <theta_hat, psi> clipped into [0,1].
std::vector<PlanResult> plan_users_linear(const std::vector<Eigen::MatrixXd>& theta_hat,
                                          const LinearMdpSpec& features, const RfModel& rf,
                                          int num_states, int num_actions, double* max_clip);

struct LinearPipelineConfig {
    double epsilon = 0.05;
    double delta = 0.05;
    RfMode rf_mode = RfMode::exact;
    long rf_budget = 0;
    double kappa_sq = 25.0;
    long grammian_t = 0; // 0 -> grammian_t_bound
    double eta = 0.5;
    double radius = 0.0; // 0 -> softmax_radius
    int net_budget = 48;
    SearchConfig search;
    double kt_c = 1.0;
    int verify_k = 25;
    int rowwise_restarts = 5;
};

struct LinearPipelineResult {
    RfModel rf;
    GrammianData grammian;
    PolicyNet net;
    std::vector<PolicySearchResult> searched;   // per level 1..H
    std::vector<double> zeta_measured;          // per level, from exact occupancy
    std::vector<double> xi_measured;
    std::vector<RowwiseResult> rowwise;         // per level
    std::vector<Eigen::MatrixXd> theta_hat;     // per level, N x d
    std::vector<PlanResult> user_plans;
    double max_reward_clip = 0.0;
};

// Full pipeline: reward-free fit, Grammian conditioning, per-level policy
// search, per-level row-wise recovery of theta from on-policy rollouts,
// per-user planning on the recovered rewards.
LinearPipelineResult run_linear_pipeline(const LinearInstance& inst,
                                         const LinearPipelineConfig& cfg, std::uint64_t seed);

} // namespace murl
