#include "doctest.h"

#include <set>

#include "murl/instances.hpp"
#include "murl/rng.hpp"

using murl::RngStream;

TEST_CASE("equal keys reproduce identical draws") {
    RngStream a(42), b(42);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different keys diverge") {
    RngStream a(1), b(2);
    int same = 0;
    for (int i = 0; i < 64; ++i) same += a.next_u64() == b.next_u64() ? 1 : 0;
    CHECK(same == 0);
}

TEST_CASE("child streams are independent of creation order and draw state") {
    RngStream root(7);
    RngStream c1 = root.child(3);
    RngStream pre = root.child(9);
    (void)pre;
    RngStream other(7);
    for (int i = 0; i < 100; ++i) (void)other.next_u64();
    RngStream c2 = other.child(3);
    for (int i = 0; i < 100; ++i) CHECK(c1.next_u64() == c2.next_u64());
}

TEST_CASE("string and integer tags give distinct children") {
    RngStream root(7);
    std::set<std::uint64_t> keys;
    keys.insert(root.child("alpha").key());
    keys.insert(root.child("beta").key());
    keys.insert(root.child(0).key());
    keys.insert(root.child(1).key());
    keys.insert(root.key());
    CHECK(keys.size() == 5);
}

TEST_CASE("uniform stays in the half-open unit interval") {
    RngStream r(11);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("uniform_int covers its range without leaving it") {
    RngStream r(13);
    std::set<int> seen;
    for (int i = 0; i < 2000; ++i) {
        const int v = r.index(7);
        CHECK(v >= 0);
        CHECK(v < 7);
        seen.insert(v);
    }
    CHECK(seen.size() == 7);
    CHECK_THROWS_AS(r.uniform_int(0), std::invalid_argument);
}

TEST_CASE("normal draws have roughly standard moments") {
    RngStream r(17);
    const int n = 200000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        sum += x;
        sumsq += x * x;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    // 3 standard errors: se(mean) ~ 1/sqrt(n), se(var) ~ sqrt(2/n)
    CHECK(std::abs(mean) < 3.0 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(var - 1.0) < 3.0 * std::sqrt(2.0 / n));
}

TEST_CASE("categorical follows the weight proportions") {
    RngStream r(19);
    Eigen::VectorXd w(3);
    w << 1.0, 2.0, 1.0;
    int counts[3] = {0, 0, 0};
    const int n = 40000;
    for (int i = 0; i < n; ++i) ++counts[r.categorical(w)];
    CHECK(std::abs(counts[1] / static_cast<double>(n) - 0.5) < 0.01);
    Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
    CHECK_THROWS_AS(r.categorical(zero), std::invalid_argument);
}

TEST_CASE("dirichlet draws live on the simplex") {
    RngStream r(23);
    for (int trial = 0; trial < 50; ++trial) {
        const Eigen::VectorXd v = murl::dirichlet(r, 6, 5);
        CHECK(v.size() == 6);
        CHECK(v.minCoeff() >= 0.0);
        CHECK(v.sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
}
