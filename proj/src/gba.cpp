#include "stgnp/gba.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace stgnp {

GaussianVar encode_gaussian(const EncoderVars& enc, const Var& input, double sigma_min) {
    const Var hidden = elu(conv1x1(input, enc.hidden_weight, enc.hidden_bias));
    const Var mean = conv1x1(hidden, enc.mean_weight, enc.mean_bias);
    const Var std = bounded_std(conv1x1(hidden, enc.std_weight, enc.std_bias), sigma_min);
    return {mean, std};
}

GaussianVar gba_prior(const EncoderVars& enc_z, const Var& z_above, const Var& v, double sigma_min) {
    const std::array<Var, 2> parts{z_above, v};
    return encode_gaussian(enc_z, concat_channels(parts), sigma_min);
}

GaussianVar gba_observations(const EncoderVars& enc_r, const Var& h, double sigma_min) {
    return encode_gaussian(enc_r, h, sigma_min);
}

namespace {

// prec = 1/sigma_z^2 + sum a^2/sigma_R^2, numer = mu_z/sigma_z^2 + sum a R/sigma_R^2
void accumulate_precision(const double* mu_p, const double* sd_p, const Tensor& r, const Tensor& sd_r,
                          const std::vector<std::pair<std::size_t, double>>& neighbors, std::size_t block,
                          std::vector<double>& prec, std::vector<double>& numer) {
    for (std::size_t i = 0; i < block; ++i) {
        const double p = 1.0 / (sd_p[i] * sd_p[i]);
        prec[i] = p;
        numer[i] = mu_p[i] * p;
    }
    for (const auto& [n, a] : neighbors) {
        const double* rn = r.ptr() + n * block;
        const double* srn = sd_r.ptr() + n * block;
        for (std::size_t i = 0; i < block; ++i) {
            const double obs_prec = 1.0 / (srn[i] * srn[i]);
            prec[i] += a * a * obs_prec;
            numer[i] += a * rn[i] * obs_prec;
        }
    }
}

}  // namespace

GaussianVar gba_update(const GaussianVar& prior, const GaussianVar& observations, const Tensor& weights) {
    const Tensor& mu_p = prior.mean.value();
    const Tensor& sd_p = prior.std.value();
    const Tensor& r = observations.mean.value();
    const Tensor& sd_r = observations.std.value();
    if (mu_p.rank() != 3 || sd_p.shape() != mu_p.shape() || sd_r.shape() != r.shape() || r.rank() != 3) {
        throw std::invalid_argument("gba_update: prior and observations must be (nodes, T, d) Gaussians");
    }
    const std::size_t m_count = mu_p.dim(0);
    const std::size_t n_count = r.dim(0);
    const std::size_t block = mu_p.dim(1) * mu_p.dim(2);
    if (r.dim(1) != mu_p.dim(1) || r.dim(2) != mu_p.dim(2)) {
        throw std::invalid_argument("gba_update: observation grid " + shape_str(r.shape()) +
                                    " does not match prior " + shape_str(mu_p.shape()));
    }
    if (weights.rank() != 2 || weights.dim(0) != m_count || weights.dim(1) != n_count) {
        throw std::invalid_argument("gba_update: weights " + shape_str(weights.shape()) + " for " +
                                    std::to_string(m_count) + " targets and " + std::to_string(n_count) +
                                    " contexts");
    }
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (!(weights[i] >= 0.0)) {
            throw std::invalid_argument("gba_update: negative adjacency weight");
        }
    }
    for (const Tensor* s : {&sd_p, &sd_r}) {
        for (std::size_t i = 0; i < s->size(); ++i) {
            if (!((*s)[i] > 0.0)) {
                throw std::domain_error("gba_update: non-positive standard deviation");
            }
        }
    }

    // Row m's nonzero neighbours, in ascending context order.
    std::vector<std::vector<std::pair<std::size_t, double>>> neighbors(m_count);
    for (std::size_t m = 0; m < m_count; ++m) {
        for (std::size_t n = 0; n < n_count; ++n) {
            if (weights.at(m, n) != 0.0) {
                neighbors[m].emplace_back(n, weights.at(m, n));
            }
        }
    }

    Tensor mean(mu_p.shape());
    Tensor std(mu_p.shape());
    std::vector<double> prec(block), numer(block);
    for (std::size_t m = 0; m < m_count; ++m) {
        const std::size_t off = m * block;
        if (neighbors[m].empty()) {
            std::copy_n(mu_p.ptr() + off, block, mean.ptr() + off);
            std::copy_n(sd_p.ptr() + off, block, std.ptr() + off);
            continue;
        }
        accumulate_precision(mu_p.ptr() + off, sd_p.ptr() + off, r, sd_r, neighbors[m], block, prec, numer);
        for (std::size_t i = 0; i < block; ++i) {
            const double var = 1.0 / prec[i];
            mean[off + i] = var * numer[i];
            std[off + i] = std::sqrt(var);
        }
    }

    Tape& tape = *prior.mean.tape();
    const std::size_t mpi = prior.mean.id(), spi = prior.std.id();
    const std::size_t ri = observations.mean.id(), sri = observations.std.id();
    const bool rg = tape.requires_grad(mpi) || tape.requires_grad(spi) || tape.requires_grad(ri) ||
                    tape.requires_grad(sri);

    // Two outputs, one adjoint: the std node (recorded last, so replayed first
    // among the pair) reads both adjoints. Its own adjoint is pre-allocated so
    // the replay happens even when only the mean is consumed downstream.
    const Var mean_var = tape.record("gba_update.mean", std::move(mean), rg, {});
    const std::size_t mean_id = mean_var.id();
    const Var std_var = tape.record(
        "gba_update", std::move(std), rg,
        [mean_id, mpi, spi, ri, sri, neighbors = std::move(neighbors), block](Tape& t, std::size_t self) {
            const Tensor* g_mean = t.grad_if(mean_id);
            const Tensor* g_std = t.grad_if(self);
            const Tensor& mu_p = t.value(mpi);
            const Tensor& sd_p = t.value(spi);
            const Tensor& r = t.value(ri);
            const Tensor& sd_r = t.value(sri);
            const Tensor& post_sd = t.value(self);
            Tensor* g_mp = t.requires_grad(mpi) ? &t.grad(mpi) : nullptr;
            Tensor* g_sp = t.requires_grad(spi) ? &t.grad(spi) : nullptr;
            Tensor* g_r = t.requires_grad(ri) ? &t.grad(ri) : nullptr;
            Tensor* g_sr = t.requires_grad(sri) ? &t.grad(sri) : nullptr;
            std::vector<double> prec(block), numer(block), g_numer(block), g_prec(block);
            for (std::size_t m = 0; m < neighbors.size(); ++m) {
                const std::size_t off = m * block;
                if (neighbors[m].empty()) {
                    for (std::size_t i = 0; i < block; ++i) {
                        if (g_mp && g_mean) {
                            (*g_mp)[off + i] += (*g_mean)[off + i];
                        }
                        if (g_sp && g_std) {
                            (*g_sp)[off + i] += (*g_std)[off + i];
                        }
                    }
                    continue;
                }
                accumulate_precision(mu_p.ptr() + off, sd_p.ptr() + off, r, sd_r, neighbors[m], block, prec, numer);
                // mean = var * numer, std = sqrt(var), var = 1 / prec
                for (std::size_t i = 0; i < block; ++i) {
                    const double gm = g_mean ? (*g_mean)[off + i] : 0.0;
                    const double gs = g_std ? (*g_std)[off + i] : 0.0;
                    const double var = 1.0 / prec[i];
                    const double g_var = gm * numer[i] + gs * 0.5 / post_sd[off + i];
                    g_numer[i] = gm * var;
                    g_prec[i] = -g_var * var * var;
                    const double s = sd_p[off + i];
                    const double d_prec_ds = -2.0 / (s * s * s);
                    if (g_mp) {
                        (*g_mp)[off + i] += g_numer[i] / (s * s);
                    }
                    if (g_sp) {
                        (*g_sp)[off + i] += (g_prec[i] + g_numer[i] * mu_p[off + i]) * d_prec_ds;
                    }
                }
                for (const auto& [n, a] : neighbors[m]) {
                    const double* rn = r.ptr() + n * block;
                    const double* srn = sd_r.ptr() + n * block;
                    for (std::size_t i = 0; i < block; ++i) {
                        const double obs_prec = 1.0 / (srn[i] * srn[i]);
                        if (g_r) {
                            (*g_r)[n * block + i] += g_numer[i] * a * obs_prec;
                        }
                        if (g_sr) {
                            const double d_obs_prec = -2.0 * obs_prec / srn[i];
                            (*g_sr)[n * block + i] += (g_prec[i] * a * a + g_numer[i] * a * rn[i]) * d_obs_prec;
                        }
                    }
                }
            }
        });
    if (rg) {
        tape.grad(std_var.id());
    }
    return {mean_var, std_var};
}

DiagGaussian gba_update(const DiagGaussian& prior, const DiagGaussian& observations, const Tensor& weights) {
    Tape tape;
    const GaussianVar p{tape.watch(prior.mean, false), tape.watch(prior.std, false)};
    const GaussianVar o{tape.watch(observations.mean, false), tape.watch(observations.std, false)};
    return gba_update(p, o, weights).value();
}

}  // namespace stgnp
