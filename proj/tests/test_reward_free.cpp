#include "doctest.h"

#include <algorithm>

#include "murl/instances.hpp"
#include "murl/reward_free.hpp"

using namespace murl;

namespace {

TabularInstance small_instance(std::uint64_t seed) {
    TabularGenParams p;
    p.num_users = 6;
    p.num_states = 4;
    p.num_actions = 2;
    p.horizon = 3;
    p.rank = 2;
    return gen_tabular_instance(p, seed);
}

RewardFunction random_reward(RngStream& rng, int S, int A, int H) {
    std::vector<Eigen::MatrixXd> vals;
    for (int h = 0; h < H; ++h) {
        Eigen::MatrixXd r(S, A);
        for (int s = 0; s < S; ++s)
            for (int a = 0; a < A; ++a) r(s, a) = rng.uniform();
        vals.push_back(std::move(r));
    }
    return RewardFunction(std::move(vals));
}

double plan_gap_on_truth(const TabularMdp& truth, const RfModel& rf, const RewardFunction& r) {
    const PlanResult plan = rf_plan(rf, r);
    const double opt = optimal_policy(truth, r).value;
    return opt - exact_value(truth, plan.policy, r);
}

} // namespace

TEST_CASE("exact mode copies the dynamics and plans optimally at zero cost") {
    const TabularInstance inst = small_instance(1);
    const RfModel rf = rf_fit(inst.mdp, RfMode::exact, 0, RngStream(9));
    CHECK(rf.episodes_used == 0);
    CHECK(!rf.low_confidence);
    CHECK(rf.model.init_dist == inst.mdp.init_dist);
    for (std::size_t h = 0; h < inst.mdp.transitions.size(); ++h)
        CHECK(rf.model.transitions[h] == inst.mdp.transitions[h]);

    RngStream rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const RewardFunction r = random_reward(rng, 4, 2, 3);
        CHECK(plan_gap_on_truth(inst.mdp, rf, r) < 1e-12);
    }
}

TEST_CASE("empirical mode yields near-optimal plans for arbitrary rewards") {
    const TabularInstance inst = small_instance(2);
    const RfModel rf = rf_fit(inst.mdp, RfMode::empirical, 4000, RngStream(3));
    CHECK(rf.episodes_used == 4000);
    RngStream rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const RewardFunction r = random_reward(rng, 4, 2, 3);
        CHECK(plan_gap_on_truth(inst.mdp, rf, r) < 0.1);
    }
}

TEST_CASE("doubling the exploration budget shrinks the median plan gap") {
    const TabularInstance inst = small_instance(4);
    RngStream rng(29);
    std::vector<RewardFunction> rewards;
    for (int i = 0; i < 15; ++i) rewards.push_back(random_reward(rng, 4, 2, 3));

    auto median_gap = [&](long budget) {
        std::vector<double> gaps;
        for (int s = 0; s < 5; ++s) {
            const RfModel rf = rf_fit(inst.mdp, RfMode::empirical, budget, RngStream(100 + s));
            for (const auto& r : rewards) gaps.push_back(plan_gap_on_truth(inst.mdp, rf, r));
        }
        std::sort(gaps.begin(), gaps.end());
        return gaps[gaps.size() / 2];
    };
    const double coarse = median_gap(100);
    const double fine = median_gap(3200);
    CHECK(fine <= coarse + 1e-12);
    CHECK(fine < 0.02);
}

TEST_CASE("each episode adds one visit per step") {
    const TabularInstance inst = small_instance(5);
    const long budget = 257;
    const RfModel rf = rf_fit(inst.mdp, RfMode::empirical, budget, RngStream(31));
    for (const auto& counts : rf.visit_counts) CHECK(counts.sum() == budget);
}

TEST_CASE("the estimated initial distribution matches the visit counts") {
    const TabularInstance inst = small_instance(6);
    const long budget = 2000;
    const RfModel rf = rf_fit(inst.mdp, RfMode::empirical, budget, RngStream(33));
    // counts at step 0 are exactly the observed starts
    Eigen::VectorXd first = Eigen::VectorXd::Zero(4);
    for (int s = 0; s < 4; ++s)
        first[s] = rf.visit_counts[0].row(s).sum();
    CHECK((rf.model.init_dist - first / first.sum()).cwiseAbs().maxCoeff() < 1e-12);
    // and close to the truth at this budget (3 standard errors ~ 0.034)
    CHECK((rf.model.init_dist - inst.mdp.init_dist).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("unreachable rows fall back to uniform and raise the flag") {
    // state 2 is unreachable: no inbound mass, no initial mass
    Eigen::MatrixXd t(6, 3);
    t << 1, 0, 0,
         0, 1, 0,
         0.5, 0.5, 0,
         1, 0, 0,
         0, 0, 1,   // (s2,a0) would leave, but s2 is never entered
         0, 0, 1;
    Eigen::VectorXd init(3);
    init << 0.6, 0.4, 0.0;
    const TabularMdp truth(3, 2, 3, {t, t}, init);
    const RfModel rf = rf_fit(truth, RfMode::empirical, 600, RngStream(37));
    CHECK(rf.low_confidence);
    bool saw_state2 = false;
    for (const auto& cell : rf.unvisited) saw_state2 = saw_state2 || cell[1] == 2;
    CHECK(saw_state2);
    for (const auto& cell : rf.unvisited) {
        const int h = cell[0], s = cell[1], a = cell[2];
        REQUIRE(h + 1 < 3);
        const Eigen::VectorXd row =
            rf.model.transitions[h].row(truth.pair_index(s, a)).transpose();
        CHECK((row.array() - 1.0 / 3).abs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("zero-budget empirical fit degrades gracefully") {
    const TabularInstance inst = small_instance(8);
    const RfModel rf = rf_fit(inst.mdp, RfMode::empirical, 0, RngStream(41));
    CHECK(rf.low_confidence);
    CHECK(rf.episodes_used == 0);
    // the fallback model is fully uniform yet still plannable
    RngStream rng(43);
    const RewardFunction r = random_reward(rng, 4, 2, 3);
    CHECK_NOTHROW(rf_plan(rf, r));
}

TEST_CASE("reward-free fitting is deterministic in the stream") {
    const TabularInstance inst = small_instance(9);
    const RfModel a = rf_fit(inst.mdp, RfMode::empirical, 300, RngStream(47));
    const RfModel b = rf_fit(inst.mdp, RfMode::empirical, 300, RngStream(47));
    for (std::size_t h = 0; h < a.model.transitions.size(); ++h)
        CHECK(a.model.transitions[h] == b.model.transitions[h]);
    CHECK(a.model.init_dist == b.model.init_dist);
}
