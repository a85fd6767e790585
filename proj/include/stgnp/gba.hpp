#pragma once

#include "stgnp/autodiff.hpp"
#include "stgnp/gaussian.hpp"

namespace stgnp {

/// Parameters of a one-hidden-layer 1x1-conv encoder with mean and raw-std heads.
struct EncoderVars {
    Var hidden_weight, hidden_bias;
    Var mean_weight, mean_bias;
    Var std_weight, std_bias;
};

/// Runs the encoder on `input` (..., C_in): returns (mean, sigma_min + softplus(raw)).
GaussianVar encode_gaussian(const EncoderVars& enc, const Var& input, double sigma_min);

/// Conditional prior of a target latent from the sample above and the target
/// representation; both are (M, T, *).
GaussianVar gba_prior(const EncoderVars& enc_z, const Var& z_above, const Var& v, double sigma_min);

/// Latent observations (R_n, sigma_Rn) for every context node, stacked as (N, T, d).
GaussianVar gba_observations(const EncoderVars& enc_r, const Var& h, double sigma_min);

/// Closed-form precision-weighted conditioning of each target's prior on the
/// context observations, elementwise over (T, d):
///   1/var = 1/sigma_z^2 + sum_n a_mn^2 / sigma_Rn^2
///   mean  = var * (mu_z / sigma_z^2 + sum_n a_mn R_n / sigma_Rn^2)
/// `weights` is (M, N), nonnegative. Zero weights are skipped exactly; a target
/// whose row is all zero returns its prior unchanged.
GaussianVar gba_update(const GaussianVar& prior, const GaussianVar& observations, const Tensor& weights);

/// Value-level conditioning through the same code path.
DiagGaussian gba_update(const DiagGaussian& prior, const DiagGaussian& observations, const Tensor& weights);

}  // namespace stgnp
