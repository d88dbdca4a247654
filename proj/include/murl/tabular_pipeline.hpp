#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "murl/completion.hpp"
#include "murl/instances.hpp"
#include "murl/reward_free.hpp"

namespace murl {

struct PhaseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MaskRate {
    double p = 0.0;
    bool clamped = false;
};

// p = c * max(mu1^2, mu0) * r * (N + SA) * log(SA)^2 * log(H/delta) / (N * SA),
// clamped into (0, 1/2].
MaskRate mask_rate_from_coherence(int num_users, int num_pairs, int rank, double mu0, double mu1,
                                int horizon, double delta, double c = 1.0);

struct MaskSamplerResult {
    // active[h][pair] stays set until the pair collects ceil(N*p) distinct users
    std::vector<std::vector<char>> active;
    std::vector<Eigen::VectorXi> counts;     // per h, distinct users observed per pair
    std::vector<MaskedMatrix> observations;  // per h, N x SA with per-entry mask
    long trajectories = 0;
    long replans = 0;
    double value_at_termination = 0.0; // planner estimate of residual active mass
    int quota = 0;                     // ceil(N*p)
};

// Uniform-user sampling loop: plan on the indicator of the active sets, roll
// one episode on a uniformly drawn user, record first-time reward entries,
// retire pairs at quota, re-plan only when some active set changed. Stops when
// the planned indicator value drops to epsilon/2; throws PhaseError at
// safety_multiplier times the 16*N*p*SA*H/eps trajectory budget.
MaskSamplerResult run_mask_sampler(const TabularMdp& mdp, const RewardMatrixSet& rewards,
                                   const RfModel& rf, double epsilon, double mask_rate,
                                   RngStream rng, int safety_multiplier = 10);

struct CompletedRewards {
    std::vector<Eigen::MatrixXd> full;            // per h, N x SA; zero on still-active pairs
    std::vector<std::vector<int>> completed_cols; // per h, pairs that reached quota
    std::vector<double> residuals;                // per h, ALS interpolation residual
    double max_clip = 0.0;                        // largest [0,1] clamp applied
};

// Completes the quota-saturated columns at the instance rank. Each such column
// must carry exactly `quota` observations.
CompletedRewards complete_rewards(const MaskSamplerResult& sampled, int rank,
                                  const CompletionOptions& opts = {});

struct TabularPipelineConfig {
    double epsilon = 0.05;
    double delta = 0.1;
    double mask_rate = 0.0;  // 0 -> derive via mask_rate_from_coherence
    double mask_rate_c = 1.0;
    RfMode rf_mode = RfMode::exact;
    long rf_budget = 0;
    int safety_multiplier = 10;
    CompletionOptions completion;
};

struct TabularPipelineResult {
    RfModel rf;
    MaskRate rate;
    MaskSamplerResult sampled;
    CompletedRewards completed;
    std::vector<PlanResult> user_plans; // per user, planned on the completed rewards
};

TabularPipelineResult run_tabular_pipeline(const TabularInstance& inst,
                                           const TabularPipelineConfig& cfg, std::uint64_t seed);

// Matched-accuracy comparator: per user, doubling episode budgets for an
// independent empirical reward-free run until the user's plan is eps-optimal
// on the true instance. Returns the successful budget per user.
std::vector<long> baseline_per_user_budgets(const TabularInstance& inst, double epsilon,
                                            std::uint64_t seed, long initial_budget = 64,
                                            long max_budget = 1L << 22);

} // namespace murl
