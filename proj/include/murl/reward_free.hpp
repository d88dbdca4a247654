#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "murl/mdp.hpp"
#include "murl/rng.hpp"

namespace murl {

enum class RfMode { exact, empirical };

// Dynamics model produced by reward-free exploration. Planning any [0,1]
// reward against `model` yields a policy plus a value estimate whose error is
// zero in exact mode and shrinks with the episode budget in empirical mode.
struct RfModel {
    RfMode mode = RfMode::exact;
    TabularMdp model;
    std::vector<Eigen::MatrixXi> visit_counts; // H matrices S x A (step-h visits)
    long episodes_used = 0;
    bool low_confidence = false;                 // some (h,s,a) row never visited
    std::vector<std::array<int, 3>> unvisited;   // rows that fell back to uniform
};

// mode exact copies the true dynamics; mode empirical spends `budget` episodes
// steering at the least-visited cells and estimates transitions from counts.
RfModel rf_fit(const TabularMdp& truth, RfMode mode, long budget, RngStream rng);

// Backward induction on the fitted model. Rewards must lie in [0,1].
PlanResult rf_plan(const RfModel& model, const RewardFunction& reward);

TabularPolicy rf_plan_on(const TabularMdp& model, const RewardFunction& reward);

} // namespace murl
