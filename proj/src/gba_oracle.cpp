#include "stgnp/gba_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "stgnp/gba.hpp"

namespace stgnp::oracle {

namespace {

void check_square(const Eigen::MatrixXd& m, Eigen::Index d, const char* what) {
    if (m.rows() != d || m.cols() != d) {
        throw std::invalid_argument(std::string("gba oracle: ") + what + " must be " + std::to_string(d) + "x" +
                                    std::to_string(d));
    }
}

void check_inputs(const FullGaussian& prior, std::span<const LinearObservation> observations, bool need_values) {
    const Eigen::Index d = prior.mean.size();
    check_square(prior.precision, d, "prior precision");
    for (const LinearObservation& o : observations) {
        check_square(o.transform, d, "observation transform");
        check_square(o.precision, d, "observation precision");
        if (need_values && o.value.size() != d) {
            throw std::invalid_argument("gba oracle: observation value has wrong dimension");
        }
    }
}

}  // namespace

Eigen::MatrixXd FullGaussian::covariance() const {
    if (precision.isDiagonal(0.0)) {
        return precision.diagonal().cwiseInverse().asDiagonal();
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(precision);
    if (llt.info() != Eigen::Success) {
        throw std::domain_error("gba oracle: precision is not positive definite");
    }
    return llt.solve(Eigen::MatrixXd::Identity(precision.rows(), precision.cols()));
}

Eigen::MatrixXd joint_precision(const FullGaussian& prior, std::span<const LinearObservation> observations) {
    check_inputs(prior, observations, false);
    const Eigen::Index d = prior.mean.size();
    const auto n = static_cast<Eigen::Index>(observations.size());
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(d * (n + 1), d * (n + 1));
    p.topLeftCorner(d, d) = prior.precision;
    for (Eigen::Index i = 0; i < n; ++i) {
        const LinearObservation& o = observations[static_cast<std::size_t>(i)];
        const Eigen::Index off = d * (i + 1);
        p.topLeftCorner(d, d) += o.transform.transpose() * o.precision * o.transform;
        p.block(0, off, d, d) = -o.transform.transpose() * o.precision;
        p.block(off, 0, d, d) = -o.precision * o.transform;
        p.block(off, off, d, d) = o.precision;
    }
    return p;
}

FullGaussian condition_full(const FullGaussian& prior, std::span<const LinearObservation> observations) {
    check_inputs(prior, observations, true);
    const bool informative = std::any_of(observations.begin(), observations.end(),
                                         [](const LinearObservation& o) { return !o.transform.isZero(0.0); });
    if (!informative) {
        return prior;
    }
    Eigen::MatrixXd precision = prior.precision;
    Eigen::VectorXd info = prior.precision * prior.mean;
    for (const LinearObservation& o : observations) {
        const Eigen::MatrixXd at_l = o.transform.transpose() * o.precision;
        precision += at_l * o.transform;
        info += at_l * o.value;
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(precision);
    if (llt.info() != Eigen::Success) {
        throw std::domain_error("gba oracle: posterior precision is singular");
    }
    return {llt.solve(info), precision};
}

OracleDeviation check_factorized_vs_full(std::size_t trials, std::size_t max_dim, std::size_t max_neighbors,
                                         std::uint64_t seed) {
    if (max_dim < 1 || max_neighbors < 1) {
        throw std::invalid_argument("check_factorized_vs_full: max_dim and max_neighbors must be >= 1");
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> dim_dist(1, max_dim);
    std::uniform_int_distribution<std::size_t> nb_dist(1, max_neighbors);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto draw_sigma = [&] { return 0.1 + 1.9 * unit(rng); };

    OracleDeviation dev;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::size_t d = dim_dist(rng);
        const std::size_t n = nb_dist(rng);
        const auto de = static_cast<Eigen::Index>(d);

        Tensor mu_p(Shape{1, 1, d}), sd_p(Shape{1, 1, d});
        Tensor r(Shape{n, 1, d}), sd_r(Shape{n, 1, d});
        Tensor weights(Shape{1, n});
        FullGaussian prior{Eigen::VectorXd(de), Eigen::MatrixXd::Zero(de, de)};
        for (std::size_t i = 0; i < d; ++i) {
            mu_p[i] = normal(rng);
            sd_p[i] = draw_sigma();
            prior.mean(static_cast<Eigen::Index>(i)) = mu_p[i];
            prior.precision(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = 1.0 / (sd_p[i] * sd_p[i]);
        }
        std::vector<LinearObservation> obs;
        for (std::size_t k = 0; k < n; ++k) {
            // Roughly one weight in five is exactly zero.
            const double a = unit(rng) < 0.2 ? 0.0 : unit(rng);
            weights[k] = a;
            LinearObservation o{a * Eigen::MatrixXd::Identity(de, de), Eigen::MatrixXd::Zero(de, de),
                                Eigen::VectorXd(de)};
            for (std::size_t i = 0; i < d; ++i) {
                const auto ie = static_cast<Eigen::Index>(i);
                r[k * d + i] = 3.0 * normal(rng);
                sd_r[k * d + i] = draw_sigma();
                o.value(ie) = r[k * d + i];
                o.precision(ie, ie) = 1.0 / (sd_r[k * d + i] * sd_r[k * d + i]);
            }
            obs.push_back(std::move(o));
        }

        const DiagGaussian fact = gba_update(DiagGaussian{mu_p, sd_p}, DiagGaussian{r, sd_r}, weights);
        const FullGaussian full = condition_full(prior, obs);
        const Eigen::MatrixXd cov = full.covariance();
        for (Eigen::Index i = 0; i < de; ++i) {
            const auto iu = static_cast<std::size_t>(i);
            dev.mean = std::max(dev.mean, std::abs(fact.mean[iu] - full.mean(i)));
            for (Eigen::Index j = 0; j < de; ++j) {
                // Round-trip through the precision so both paths round alike.
                const double fv = i == j ? 1.0 / (1.0 / (fact.std[iu] * fact.std[iu])) : 0.0;
                dev.variance = std::max(dev.variance, std::abs(fv - cov(i, j)));
            }
        }
        ++dev.trials;
    }
    return dev;
}

}  // namespace stgnp::oracle
