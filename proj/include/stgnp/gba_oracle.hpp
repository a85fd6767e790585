#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace stgnp::oracle {

/// Full-covariance Gaussian in information form.
struct FullGaussian {
    Eigen::VectorXd mean;
    Eigen::MatrixXd precision;

    Eigen::MatrixXd covariance() const;
};

/// R_n ~ N(A_n z, L_n^{-1}).
struct LinearObservation {
    Eigen::MatrixXd transform;  // A_n
    Eigen::MatrixXd precision;  // L_n
    Eigen::VectorXd value;      // R_n
};

/// Precision of the joint (z, R_1..R_N), laid out block-wise with z first.
Eigen::MatrixXd joint_precision(const FullGaussian& prior, std::span<const LinearObservation> observations);

/// Exact posterior p(z | R_1..R_N) by Gaussian conditioning.
FullGaussian condition_full(const FullGaussian& prior, std::span<const LinearObservation> observations);

struct OracleDeviation {
    double mean = 0.0;
    double variance = 0.0;  // includes the off-diagonal covariance entries
    std::size_t trials = 0;

    double max() const { return mean > variance ? mean : variance; }
};

/// Random diagonal instances with scalar weights a_n in [0, 1], solved both by
/// the factorized gba_update and by condition_full.
OracleDeviation check_factorized_vs_full(std::size_t trials, std::size_t max_dim, std::size_t max_neighbors,
                                         std::uint64_t seed);

}  // namespace stgnp::oracle
