#include "doctest.h"

#include <vector>

#include "murl/instances.hpp"
#include "murl/mdp.hpp"
#include "murl/rng.hpp"

using namespace murl;

namespace {

// Two states, two actions, two steps; chosen so every quantity below is exact
// in closed form (worked out by hand before the library existed).
TabularMdp handbook_mdp() {
    Eigen::MatrixXd p(4, 2);
    p << 1.0, 0.0,   // (s0,a0)
        0.0, 1.0,    // (s0,a1)
        0.5, 0.5,    // (s1,a0)
        0.25, 0.75;  // (s1,a1)
    Eigen::VectorXd init(2);
    init << 0.75, 0.25;
    return TabularMdp(2, 2, 2, {p}, init);
}

TabularPolicy handbook_policy() {
    Eigen::MatrixXd k0(2, 2), k1(2, 2);
    k0 << 0.5, 0.5, 1.0, 0.0;
    k1 << 0.25, 0.75, 0.6, 0.4;
    return TabularPolicy({k0, k1});
}

RewardFunction handbook_reward() {
    Eigen::MatrixXd r0(2, 2), r1(2, 2);
    r0 << 1.0, 0.0, 0.5, 0.25;
    r1 << 0.2, 0.4, 0.6, 0.8;
    return RewardFunction({r0, r1});
}

// independent policy evaluator: backward Bellman recursion
double backward_value(const TabularMdp& mdp, const TabularPolicy& pi, const RewardFunction& r) {
    const int S = mdp.num_states, A = mdp.num_actions, H = mdp.horizon;
    Eigen::VectorXd v = Eigen::VectorXd::Zero(S);
    for (int h = H - 1; h >= 0; --h) {
        Eigen::VectorXd next(S);
        for (int s = 0; s < S; ++s) {
            double acc = 0.0;
            for (int a = 0; a < A; ++a) {
                double q = r.values[h](s, a);
                if (h + 1 < H) q += mdp.transitions[h].row(mdp.pair_index(s, a)).dot(v);
                acc += pi.kernels[h](s, a) * q;
            }
            next[s] = acc;
        }
        v = next;
    }
    return mdp.init_dist.dot(v);
}

TabularMdp random_mdp(RngStream& rng, int S, int A, int H) {
    std::vector<Eigen::MatrixXd> trans;
    for (int h = 0; h + 1 < H; ++h) {
        Eigen::MatrixXd t(S * A, S);
        for (int i = 0; i < S * A; ++i) t.row(i) = dirichlet(rng, S, 1).transpose();
        trans.push_back(std::move(t));
    }
    return TabularMdp(S, A, H, std::move(trans), dirichlet(rng, S, 1));
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

TabularPolicy random_policy(RngStream& rng, int S, int A, int H) {
    std::vector<Eigen::MatrixXd> ks;
    for (int h = 0; h < H; ++h) {
        Eigen::MatrixXd k(S, A);
        for (int s = 0; s < S; ++s) k.row(s) = dirichlet(rng, A, 1).transpose();
        ks.push_back(std::move(k));
    }
    return TabularPolicy(std::move(ks));
}

} // namespace

TEST_CASE("occupancy matches the hand-worked example exactly") {
    const OccupancyProfile occ = occupancy(handbook_mdp(), handbook_policy());
    REQUIRE(occ.pair_dist.size() == 2);
    Eigen::MatrixXd occ0(2, 2), occ1(2, 2);
    occ0 << 0.375, 0.375, 0.25, 0.0;
    occ1 << 0.125, 0.375, 0.3, 0.2;
    CHECK((occ.pair_dist[0] - occ0).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((occ.pair_dist[1] - occ1).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("exact_value matches the hand-worked example exactly") {
    const double v = exact_value(handbook_mdp(), handbook_policy(), handbook_reward());
    CHECK(v == doctest::Approx(1.015).epsilon(1e-14));
}

TEST_CASE("exact_value equals the occupancy inner product and the backward recursion") {
    RngStream rng(101);
    for (int trial = 0; trial < 12; ++trial) {
        const int S = 2 + rng.index(4), A = 2 + rng.index(3), H = 1 + rng.index(4);
        const TabularMdp mdp = random_mdp(rng, S, A, H);
        const TabularPolicy pi = random_policy(rng, S, A, H);
        const RewardFunction r = random_reward(rng, S, A, H);
        const double direct = exact_value(mdp, pi, r);
        const OccupancyProfile occ = occupancy(mdp, pi);
        double via_occ = 0.0;
        for (int h = 0; h < H; ++h) via_occ += occ.pair_dist[h].cwiseProduct(r.values[h]).sum();
        CHECK(std::abs(direct - via_occ) < 1e-10);
        CHECK(std::abs(direct - backward_value(mdp, pi, r)) < 1e-10);
    }
}

TEST_CASE("occupancy rows sum to one at every step") {
    RngStream rng(103);
    const TabularMdp mdp = random_mdp(rng, 4, 3, 5);
    const TabularPolicy pi = random_policy(rng, 4, 3, 5);
    for (const auto& d : occupancy(mdp, pi).pair_dist) {
        CHECK(d.sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(d.minCoeff() >= 0.0);
    }
}

TEST_CASE("Monte-Carlo pair frequencies agree with the exact occupancy") {
    const TabularMdp mdp = handbook_mdp();
    const TabularPolicy pi = handbook_policy();
    RngStream rng(107);
    const int n = 40000;
    Eigen::MatrixXd freq0 = Eigen::MatrixXd::Zero(2, 2), freq1 = Eigen::MatrixXd::Zero(2, 2);
    for (int i = 0; i < n; ++i) {
        const Trajectory t = sample_pair_path(mdp, pi, rng);
        REQUIRE(t.states.size() == 2);
        REQUIRE(t.actions.size() == 2);
        CHECK(t.rewards.empty());
        freq0(t.states[0], t.actions[0]) += 1.0 / n;
        freq1(t.states[1], t.actions[1]) += 1.0 / n;
    }
    const OccupancyProfile occ = occupancy(mdp, pi);
    // 3 standard errors at p ~ 0.375 and n = 40000 is under 0.008
    CHECK((freq0 - occ.pair_dist[0]).cwiseAbs().maxCoeff() < 0.01);
    CHECK((freq1 - occ.pair_dist[1]).cwiseAbs().maxCoeff() < 0.01);
}

TEST_CASE("optimal_policy dominates every deterministic policy (exhaustive)") {
    RngStream rng(109);
    const int S = 3, A = 2, H = 2;
    for (int trial = 0; trial < 5; ++trial) {
        const TabularMdp mdp = random_mdp(rng, S, A, H);
        const RewardFunction r = random_reward(rng, S, A, H);
        const PlanResult plan = optimal_policy(mdp, r);
        double best = -1.0;
        for (int code = 0; code < 64; ++code) {
            std::vector<Eigen::MatrixXd> ks;
            int bits = code;
            for (int h = 0; h < H; ++h) {
                Eigen::MatrixXd k = Eigen::MatrixXd::Zero(S, A);
                for (int s = 0; s < S; ++s) {
                    k(s, bits & 1) = 1.0;
                    bits >>= 1;
                }
                ks.push_back(std::move(k));
            }
            best = std::max(best, exact_value(mdp, TabularPolicy(ks), r));
        }
        CHECK(plan.value == doctest::Approx(best).epsilon(1e-12));
        CHECK(std::abs(exact_value(mdp, plan.policy, r) - plan.value) < 1e-12);
    }
}

TEST_CASE("optimal_policy breaks exact ties toward the lowest action") {
    // both actions lead to the same place with the same reward
    Eigen::MatrixXd p(2, 1);
    p << 1.0, 1.0;
    const TabularMdp mdp(1, 2, 2, {p}, Eigen::VectorXd::Ones(1));
    Eigen::MatrixXd r0(1, 2), r1(1, 2);
    r0 << 0.7, 0.7;
    r1 << 0.3, 0.3;
    const PlanResult plan = optimal_policy(mdp, RewardFunction({r0, r1}));
    CHECK(plan.policy.kernels[0](0, 0) == 1.0);
    CHECK(plan.policy.kernels[1](0, 0) == 1.0);

    // a strictly better second action must still win
    r0 << 0.1, 0.9;
    const PlanResult plan2 = optimal_policy(mdp, RewardFunction({r0, r1}));
    CHECK(plan2.policy.kernels[0](0, 1) == 1.0);
}

TEST_CASE("construction validates shapes and stochasticity") {
    Eigen::MatrixXd good(4, 2);
    good << 1, 0, 0, 1, 0.5, 0.5, 0.25, 0.75;
    Eigen::VectorXd init(2);
    init << 0.5, 0.5;
    CHECK_NOTHROW(TabularMdp(2, 2, 2, {good}, init));

    Eigen::MatrixXd bad_rows(3, 2);
    bad_rows.setConstant(0.5);
    CHECK_THROWS_AS(TabularMdp(2, 2, 2, {bad_rows}, init), std::invalid_argument);

    Eigen::MatrixXd negative = good;
    negative(0, 0) = -0.1;
    negative(0, 1) = 1.1;
    CHECK_THROWS_AS(TabularMdp(2, 2, 2, {negative}, init), std::invalid_argument);

    Eigen::MatrixXd unnormalized = good;
    unnormalized(0, 0) = 0.9; // row sums to 0.9
    CHECK_THROWS_AS(TabularMdp(2, 2, 2, {unnormalized}, init), std::invalid_argument);

    CHECK_THROWS_AS(TabularMdp(2, 2, 3, {good}, init), std::invalid_argument);

    Eigen::VectorXd bad_init(2);
    bad_init << 0.2, 0.2;
    CHECK_THROWS_AS(TabularMdp(2, 2, 2, {good}, bad_init), std::invalid_argument);
}

TEST_CASE("reward tables must stay inside the unit interval") {
    Eigen::MatrixXd r(2, 2);
    r << 0.0, 1.0, 0.5, 0.5;
    CHECK_NOTHROW(RewardFunction({r}));
    Eigen::MatrixXd out = r;
    out(0, 0) = 1.5;
    CHECK_THROWS_AS(RewardFunction({out}), std::invalid_argument);
    out(0, 0) = -0.5;
    CHECK_THROWS_AS(RewardFunction({out}), std::invalid_argument);
}

TEST_CASE("horizon-one decision problems work end to end") {
    const TabularMdp mdp(3, 2, 1, {}, Eigen::VectorXd::Constant(3, 1.0 / 3));
    Eigen::MatrixXd r(3, 2);
    r << 0.1, 0.9, 0.8, 0.2, 0.4, 0.6;
    const PlanResult plan = optimal_policy(mdp, RewardFunction({r}));
    CHECK(plan.value == doctest::Approx((0.9 + 0.8 + 0.6) / 3.0).epsilon(1e-14));
    RngStream rng(3);
    const Trajectory t = sample_pair_path(mdp, plan.policy, rng);
    CHECK(t.states.size() == 1);
}

TEST_CASE("sampling is deterministic given the stream") {
    RngStream rng(211);
    const TabularMdp mdp = random_mdp(rng, 4, 3, 4);
    const TabularPolicy pi = random_policy(rng, 4, 3, 4);
    RngStream a(5), b(5);
    for (int i = 0; i < 20; ++i) {
        const Trajectory ta = sample_pair_path(mdp, pi, a);
        const Trajectory tb = sample_pair_path(mdp, pi, b);
        CHECK(ta.states == tb.states);
        CHECK(ta.actions == tb.actions);
    }
}

TEST_CASE("sample_trajectory reports the table rewards along the path") {
    const TabularMdp mdp = handbook_mdp();
    const TabularPolicy pi = handbook_policy();
    const RewardFunction r = handbook_reward();
    RngStream rng(7);
    const Trajectory t = sample_trajectory(mdp, pi, r, rng);
    REQUIRE(t.rewards.size() == 2);
    for (int h = 0; h < 2; ++h)
        CHECK(t.rewards[h] == r.values[h](t.states[h], t.actions[h]));
}

TEST_CASE("uniform_policy rows are uniform") {
    const TabularPolicy pi = uniform_policy(3, 4, 2);
    for (const auto& k : pi.kernels) {
        CHECK(k.rows() == 3);
        CHECK((k.array() - 0.25).abs().maxCoeff() < 1e-15);
    }
}
