#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "murl/rng.hpp"

namespace murl {

struct FitError : std::runtime_error {
    double loss;
    FitError(const std::string& what, double l) : std::runtime_error(what), loss(l) {}
};

struct EstimatorStall : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One noiseless measurement of row i: (psi, <theta_i, psi>).
using MeasurementFn =
    std::function<std::pair<Eigen::VectorXd, double>(int row, RngStream& rng)>;

struct RowMeasurements {
    Eigen::MatrixXd psis;  // K x d
    Eigen::VectorXd vals;  // K
};

struct RowwiseConfig {
    int num_rows = 0;
    int feature_dim = 0;
    int rank = 0;
    double zeta = 0.0;
    double xi = 0.0;
    double delta = 0.1;
    double c = 1.0;           // sample-schedule multiplier
    int verify_k = 25;        // fresh samples per verification
    double fit_tol = 1e-18;    // mean squared loss
    double verify_tol = 1e-16; // per-sample squared residual
    int restarts = 5;
    int als_iters = 200;
};

// Per-unknown-row sample budget for iteration with |I| unknown rows:
// ceil([c*(r|I| + d*r)/(zeta^2 xi^2)*log(d/(zeta*xi))
//       + c*log(log(N)/delta)/(zeta^2 xi^2)] / |I|).
long kt_schedule(int unknown, int d, int r, double zeta, double xi, double delta, int num_rows,
                 double c);

// Rank-<=r factorization with (near) zero loss on the given measurements;
// throws FitError when no restart interpolates to fit_tol.
Eigen::MatrixXd fit_rank_r_zero_loss(const std::vector<RowMeasurements>& rows, int rank,
                                     const RowwiseConfig& cfg, RngStream rng);

struct RowwiseIteration {
    int unknown_before = 0;
    long kt = 0;
    int verified = 0;
    double fit_loss = 0.0;
    bool fit_failed = false;
};

struct RowwiseResult {
    Eigen::MatrixXd theta_hat; // num_rows x d
    std::vector<RowwiseIteration> iterations;
    long total_measurements = 0;
    bool converged = false;
};

// Draw / fit / verify / shrink loop over the unknown-row set; iteration cap is
// 2*ceil(log2(num_rows)) + 2, hitting it raises EstimatorStall with the
// per-iteration shrink factors.
RowwiseResult run_estimator(const MeasurementFn& oracle, const RowwiseConfig& cfg, RngStream rng);

// (zeta_hat, xi_hat) of a feature sampler over a direction set:
// zeta_hat = sqrt(d) * min_x mean|<psi,x>|, xi_hat = 1/sqrt(d*lambda_max(mean psi psi^T)).
std::pair<double, double> measure_dist_constants(
    const std::function<Eigen::VectorXd(RngStream&)>& sampler, int d, int trials,
    const std::vector<Eigen::VectorXd>& directions, RngStream rng);

} // namespace murl
