#pragma once

#include "stgnp/autodiff.hpp"
#include "stgnp/tensor.hpp"

namespace stgnp {

/// Factorized Gaussian over a (time x channel) grid, possibly stacked over nodes.
struct DiagGaussian {
    Tensor mean;
    Tensor std;

    DiagGaussian() = default;
    DiagGaussian(Tensor m, Tensor s);
};

/// Tape-resident counterpart of DiagGaussian.
struct GaussianVar {
    Var mean;
    Var std;

    DiagGaussian value() const { return DiagGaussian(mean.value(), std.value()); }
};

inline constexpr double kLatentSigmaMin = 1e-3;
inline constexpr double kLikelihoodSigmaMin = 1e-2;

/// Sum over entries with mask == 1 of -0.5 [ln 2pi + 2 ln sigma + ((y - mu) / sigma)^2].
/// `y` and `mask` are constants; masked entries contribute exactly zero.
Var diag_gaussian_logpdf(const Tensor& y, const GaussianVar& g, const Tensor& mask);
double diag_gaussian_logpdf(const Tensor& y, const DiagGaussian& g, const Tensor& mask);

/// KL(q || p) summed over all entries.
Var diag_gaussian_kl(const GaussianVar& q, const GaussianVar& p);
double diag_gaussian_kl(const DiagGaussian& q, const DiagGaussian& p);

/// mean + std * noise; the noise is a constant input.
Var reparameterize(const GaussianVar& g, const Tensor& noise);
Tensor reparameterize(const DiagGaussian& g, const Tensor& noise);

}  // namespace stgnp
