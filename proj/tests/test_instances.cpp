#include "doctest.h"

#include <Eigen/SVD>

#include "murl/instances.hpp"

using namespace murl;

namespace {

int numerical_rank(const Eigen::MatrixXd& m, double tol = 1e-9) {
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    int r = 0;
    for (int i = 0; i < svd.singularValues().size(); ++i)
        if (svd.singularValues()[i] > tol) ++r;
    return r;
}

} // namespace

TEST_CASE("coherence of the all-ones matrix is minimal") {
    const Eigen::MatrixXd m = Eigen::MatrixXd::Ones(8, 6);
    const CoherenceReport c = coherence(m, 1);
    // both singular subspaces are spanned by normalized all-ones vectors:
    // n/r * ||P e_i||^2 = n * (1/n) = 1, and |U V^T| * sqrt(n1 n2 / r) = 1
    CHECK(c.mu_row == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(c.mu_col == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(c.mu0 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(c.mu1 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("coherence of a single-spike matrix is maximal") {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(8, 6);
    m(0, 0) = 1.0;
    const CoherenceReport c = coherence(m, 1);
    // spans are coordinate axes: n * ||P e_0||^2 = n on each index set
    CHECK(c.mu_row == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(c.mu_col == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(c.mu0 == doctest::Approx(8.0).epsilon(1e-12));
    // U V^T has a single entry 1: mu1 = 1 * sqrt(48)
    CHECK(c.mu1 == doctest::Approx(std::sqrt(48.0)).epsilon(1e-12));
}

TEST_CASE("tabular generator produces a valid low-rank instance") {
    TabularGenParams p;
    p.num_users = 24;
    p.num_states = 6;
    p.num_actions = 3;
    p.horizon = 3;
    p.rank = 2;
    const TabularInstance inst = gen_tabular_instance(p, 4242);

    CHECK(inst.mdp.num_states == 6);
    CHECK(inst.mdp.horizon == 3);
    CHECK(inst.seed == 4242);
    for (const auto& t : inst.mdp.transitions) {
        CHECK(t.minCoeff() >= 0.0);
        CHECK((t.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    }
    CHECK(inst.mdp.init_dist.sum() == doctest::Approx(1.0).epsilon(1e-12));

    REQUIRE(static_cast<int>(inst.rewards.matrices.size()) == 3);
    REQUIRE(static_cast<int>(inst.coherence.size()) == 3);
    for (int h = 0; h < 3; ++h) {
        const auto& r = inst.rewards.matrices[h];
        CHECK(r.rows() == 24);
        CHECK(r.cols() == 18);
        CHECK(r.minCoeff() >= 0.0);
        CHECK(r.maxCoeff() <= 1.0);
        CHECK(numerical_rank(r) <= 2);
        // the report must agree with an independent recomputation
        const CoherenceReport again = coherence(r, 2);
        CHECK(inst.coherence[h].mu0 == doctest::Approx(again.mu0).epsilon(1e-10));
        CHECK(inst.coherence[h].mu1 == doctest::Approx(again.mu1).epsilon(1e-10));
    }
}

TEST_CASE("tabular generator rejects an infeasible rank") {
    TabularGenParams p;
    p.num_users = 4;
    p.num_states = 2;
    p.num_actions = 2;
    p.horizon = 2;
    p.rank = 3; // 2*3 > min(4, 4)
    try {
        gen_tabular_instance(p, 1);
        FAIL("expected GenerationError-family exception");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("2r <= min") != std::string::npos);
    }
}

TEST_CASE("tabular generation is bitwise deterministic in the seed") {
    TabularGenParams p;
    p.num_users = 12;
    p.num_states = 4;
    p.num_actions = 2;
    p.horizon = 2;
    p.rank = 2;
    const TabularInstance a = gen_tabular_instance(p, 99);
    const TabularInstance b = gen_tabular_instance(p, 99);
    const TabularInstance c = gen_tabular_instance(p, 100);
    CHECK(a.rewards.matrices[0] == b.rewards.matrices[0]);
    CHECK(a.mdp.transitions[0] == b.mdp.transitions[0]);
    CHECK(a.mdp.init_dist == b.mdp.init_dist);
    CHECK(a.rewards.matrices[0] != c.rewards.matrices[0]);
}

TEST_CASE("redundant states receive nearly no visitation mass") {
    TabularGenParams p;
    p.num_users = 8;
    p.num_states = 10;
    p.num_actions = 2;
    p.horizon = 3;
    p.rank = 2;
    p.redundant_fraction = 0.3;
    const TabularInstance inst = gen_tabular_instance(p, 7);
    REQUIRE(inst.redundant_states.size() == 3);
    const OccupancyProfile occ =
        occupancy(inst.mdp, uniform_policy(10, 2, 3));
    for (int s : inst.redundant_states) {
        CHECK(inst.mdp.init_dist[s] < 1e-4);
        for (const auto& d : occ.pair_dist) CHECK(d.row(s).sum() < 1e-4);
    }
}

TEST_CASE("reward access audit counts every entry read") {
    TabularGenParams p;
    p.num_users = 4;
    p.num_states = 3;
    p.num_actions = 2;
    p.horizon = 2;
    p.rank = 1;
    const TabularInstance inst = gen_tabular_instance(p, 5);
    const std::uint64_t before = inst.rewards.access_count;
    (void)inst.rewards.entry(0, 1, 2);
    (void)inst.rewards.entry(1, 3, 5);
    CHECK(inst.rewards.access_count == before + 2);
    const RewardFunction r = inst.rewards.user_rewards(2, 3, 2);
    CHECK(r.values[0](1, 1) == inst.rewards.matrices[0](2, 3));
}

TEST_CASE("linear generator produces a consistent factored instance") {
    LinearGenParams p;
    p.num_users = 20;
    p.feature_dim = 5;
    p.num_states = 12;
    p.num_actions = 3;
    p.horizon = 2;
    p.rank = 2;
    const LinearInstance inst = gen_linear_instance(p, 31);

    const int pairs = 36;
    REQUIRE(inst.features.phi.rows() == pairs);
    REQUIRE(inst.features.psi.rows() == pairs);
    for (int i = 0; i < pairs; ++i) {
        CHECK(inst.features.phi.row(i).minCoeff() >= 0.0);
        CHECK(inst.features.phi.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(inst.features.psi.row(i).norm() <= 1.0 + 1e-12);
    }
    // transitions factor exactly through the features
    for (std::size_t h = 0; h < inst.mdp.transitions.size(); ++h) {
        const Eigen::MatrixXd product = inst.features.phi * inst.features.mu[h];
        CHECK((product - inst.mdp.transitions[h]).cwiseAbs().maxCoeff() < 1e-12);
        for (int j = 0; j < inst.features.mu[h].rows(); ++j) {
            CHECK(inst.features.mu[h].row(j).minCoeff() >= 0.0);
            CHECK(inst.features.mu[h].row(j).sum() == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    // rewards are linear in psi with planted low-rank coefficients
    REQUIRE(static_cast<int>(inst.theta.size()) == 2);
    for (int h = 0; h < 2; ++h) {
        CHECK(numerical_rank(inst.theta[h]) <= 2);
        const Eigen::MatrixXd rec = inst.theta[h] * inst.features.psi.transpose();
        CHECK((rec - inst.rewards.matrices[h]).cwiseAbs().maxCoeff() < 1e-9);
        CHECK(inst.rewards.matrices[h].minCoeff() >= 0.0);
        CHECK(inst.rewards.matrices[h].maxCoeff() <= 1.0);
        for (int u = 0; u < 20; ++u) CHECK(inst.theta[h].row(u).norm() <= std::sqrt(5.0));
    }
    CHECK(inst.rank_bound == 2);
    CHECK(!inst.planted_deficient_direction.has_value());
}

TEST_CASE("planted deficient direction removes one feature coordinate") {
    LinearGenParams p;
    p.num_users = 12;
    p.feature_dim = 5;
    p.num_states = 10;
    p.num_actions = 3;
    p.horizon = 2;
    p.rank = 2;
    p.plant_deficient_direction = true;
    const LinearInstance inst = gen_linear_instance(p, 13);
    REQUIRE(inst.planted_deficient_direction.has_value());
    const Eigen::VectorXd dir = *inst.planted_deficient_direction;
    CHECK(dir.size() == 5);
    CHECK(dir.norm() == doctest::Approx(1.0).epsilon(1e-12));
    // every reachable feature vector is orthogonal to the planted direction
    CHECK((inst.features.phi * dir).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("linear generator rejects an infeasible rank") {
    LinearGenParams p;
    p.num_users = 20;
    p.feature_dim = 4;
    p.num_states = 8;
    p.num_actions = 2;
    p.horizon = 2;
    p.rank = 3; // 2*3 > min(20, 4)
    CHECK_THROWS_AS(gen_linear_instance(p, 1), std::invalid_argument);
}
