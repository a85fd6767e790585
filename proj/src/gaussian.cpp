#include "stgnp/gaussian.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace stgnp {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // ln(2 pi)

void require_positive(const Tensor& std, const char* op) {
    for (std::size_t i = 0; i < std.size(); ++i) {
        if (!(std[i] > 0.0)) {
            throw std::domain_error(std::string(op) + ": non-positive standard deviation at entry " +
                                    std::to_string(i));
        }
    }
}

}  // namespace

DiagGaussian::DiagGaussian(Tensor m, Tensor s) : mean(std::move(m)), std(std::move(s)) {
    if (mean.shape() != std.shape()) {
        throw std::invalid_argument("DiagGaussian: mean " + shape_str(mean.shape()) + " and std " +
                                    shape_str(std.shape()) + " differ in shape");
    }
}

Var diag_gaussian_logpdf(const Tensor& y, const GaussianVar& g, const Tensor& mask) {
    const Tensor& mu = g.mean.value();
    const Tensor& sd = g.std.value();
    if (y.shape() != mu.shape() || sd.shape() != mu.shape() || mask.shape() != mu.shape()) {
        throw std::invalid_argument("diag_gaussian_logpdf: shape mismatch between y " + shape_str(y.shape()) +
                                    ", mean " + shape_str(mu.shape()) + ", mask " + shape_str(mask.shape()));
    }
    require_positive(sd, "diag_gaussian_logpdf");
    double total = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (mask[i] == 0.0) {
            continue;
        }
        const double z = (y[i] - mu[i]) / sd[i];
        total += -0.5 * (kLog2Pi + 2.0 * std::log(sd[i]) + z * z);
    }
    Tape& tape = *g.mean.tape();
    const bool rg = g.mean.requires_grad() || g.std.requires_grad();
    const std::size_t mi = g.mean.id(), si = g.std.id();
    return tape.record("diag_gaussian_logpdf", Tensor::scalar(total), rg,
                       [y, mask, mi, si](Tape& t, std::size_t self) {
                           const double g = t.grad(self)[0];
                           const Tensor& mu = t.value(mi);
                           const Tensor& sd = t.value(si);
                           double* gm = t.requires_grad(mi) ? t.grad(mi).ptr() : nullptr;
                           double* gs = t.requires_grad(si) ? t.grad(si).ptr() : nullptr;
                           for (std::size_t i = 0; i < y.size(); ++i) {
                               if (mask[i] == 0.0) {
                                   continue;
                               }
                               const double z = (y[i] - mu[i]) / sd[i];
                               if (gm) {
                                   gm[i] += g * z / sd[i];
                               }
                               if (gs) {
                                   gs[i] += g * (z * z - 1.0) / sd[i];
                               }
                           }
                       });
}

double diag_gaussian_logpdf(const Tensor& y, const DiagGaussian& g, const Tensor& mask) {
    Tape tape;
    GaussianVar gv{tape.watch(g.mean, false), tape.watch(g.std, false)};
    return diag_gaussian_logpdf(y, gv, mask).value().item();
}

Var diag_gaussian_kl(const GaussianVar& q, const GaussianVar& p) {
    const Tensor& mq = q.mean.value();
    const Tensor& sq = q.std.value();
    const Tensor& mp = p.mean.value();
    const Tensor& sp = p.std.value();
    if (mq.shape() != sq.shape() || mp.shape() != mq.shape() || sp.shape() != mq.shape()) {
        throw std::invalid_argument("diag_gaussian_kl: shape mismatch " + shape_str(mq.shape()) + " vs " +
                                    shape_str(mp.shape()));
    }
    require_positive(sq, "diag_gaussian_kl");
    require_positive(sp, "diag_gaussian_kl");
    double total = 0.0;
    for (std::size_t i = 0; i < mq.size(); ++i) {
        const double d = mq[i] - mp[i];
        total += std::log(sp[i] / sq[i]) + (sq[i] * sq[i] + d * d) / (2.0 * sp[i] * sp[i]) - 0.5;
    }
    Tape& tape = *q.mean.tape();
    const std::size_t ids[4] = {q.mean.id(), q.std.id(), p.mean.id(), p.std.id()};
    bool rg = false;
    for (std::size_t id : ids) {
        rg = rg || tape.requires_grad(id);
    }
    return tape.record("diag_gaussian_kl", Tensor::scalar(total), rg,
                       [mqi = ids[0], sqi = ids[1], mpi = ids[2], spi = ids[3]](Tape& t, std::size_t self) {
                           const double g = t.grad(self)[0];
                           const Tensor& mq = t.value(mqi);
                           const Tensor& sq = t.value(sqi);
                           const Tensor& mp = t.value(mpi);
                           const Tensor& sp = t.value(spi);
                           auto grad_of = [&t](std::size_t id) { return t.requires_grad(id) ? t.grad(id).ptr() : nullptr; };
                           double* gmq = grad_of(mqi);
                           double* gsq = grad_of(sqi);
                           double* gmp = grad_of(mpi);
                           double* gsp = grad_of(spi);
                           for (std::size_t i = 0; i < mq.size(); ++i) {
                               const double d = mq[i] - mp[i];
                               const double vp = sp[i] * sp[i];
                               if (gmq) {
                                   gmq[i] += g * d / vp;
                               }
                               if (gmp) {
                                   gmp[i] -= g * d / vp;
                               }
                               if (gsq) {
                                   gsq[i] += g * (sq[i] / vp - 1.0 / sq[i]);
                               }
                               if (gsp) {
                                   gsp[i] += g * (1.0 / sp[i] - (sq[i] * sq[i] + d * d) / (vp * sp[i]));
                               }
                           }
                       });
}

double diag_gaussian_kl(const DiagGaussian& q, const DiagGaussian& p) {
    Tape tape;
    GaussianVar qv{tape.watch(q.mean, false), tape.watch(q.std, false)};
    GaussianVar pv{tape.watch(p.mean, false), tape.watch(p.std, false)};
    return diag_gaussian_kl(qv, pv).value().item();
}

Var reparameterize(const GaussianVar& g, const Tensor& noise) {
    if (noise.shape() != g.mean.shape()) {
        throw std::invalid_argument("reparameterize: noise shape " + shape_str(noise.shape()) +
                                    " does not match " + shape_str(g.mean.shape()));
    }
    Tape& tape = *g.mean.tape();
    return add(g.mean, mul(g.std, tape.constant(noise)));
}

Tensor reparameterize(const DiagGaussian& g, const Tensor& noise) {
    if (noise.shape() != g.mean.shape()) {
        throw std::invalid_argument("reparameterize: noise shape mismatch");
    }
    Tensor out = g.mean;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += g.std[i] * noise[i];
    }
    return out;
}

}  // namespace stgnp
