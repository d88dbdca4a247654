#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "murl/rng.hpp"

namespace murl {

struct CompletionDivergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MaskedMatrix {
    Eigen::MatrixXd values;                                   // meaningful where mask is set
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask; // same shape

    int rows() const { return static_cast<int>(values.rows()); }
    int cols() const { return static_cast<int>(values.cols()); }
    long observed() const;
    void check() const;
};

struct CompletionResult {
    Eigen::MatrixXd completed;
    double residual = 0.0; // max-abs mismatch on the observed entries
    int iterations = 0;
    int restarts_used = 0;
    bool converged = false;
};

struct CompletionOptions {
    int max_iters = 2000;
    int restarts = 12;
    double interp_tol = 1e-9;
    double ridge = 1e-12;
    std::uint64_t seed = 0x5eed;
};

// Alternating least squares at fixed rank; converged means the factorization
// interpolates the observed entries to interp_tol.
CompletionResult complete_fixed_rank(const MaskedMatrix& m, int rank,
                                     const CompletionOptions& opts = {});

struct NuclearOptions {
    double step = 0.0; // 0 -> 1.2 / observed fraction
    double tau = 0.0;  // 0 -> 5 * sqrt(n1*n2)
    int max_iters = 5000;
    double rel_tol = 1e-6; // relative Frobenius residual on observed entries
};

// Singular value thresholding on the observed-entry constraint; throws
// CompletionDivergence after 10 consecutive residual increases.
CompletionResult complete_nuclear(const MaskedMatrix& m, const NuclearOptions& opts = {});

struct RecoveryCurvePoint {
    double rate = 0.0;
    int trials = 0;
    int successes = 0;
    double median_max_err = 0.0;
};

// Fraction of exact recoveries (max-abs error <= success_tol against the
// planted matrix) as a function of the sampling rate.
std::vector<RecoveryCurvePoint> recovery_curve(int n1, int n2, int rank,
                                               const std::vector<double>& rates,
                                               int trials_per_rate, std::uint64_t seed,
                                               double success_tol = 1e-6,
                                               const CompletionOptions& opts = {});

} // namespace murl
