#include "stgnp/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace stgnp {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap as_mat(const Tensor& t, std::size_t rows, std::size_t cols) {
    return ConstMatMap(t.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MatMap as_mat(Tensor& t, std::size_t rows, std::size_t cols) {
    return MatMap(t.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Tape& same_tape(const Var& a, const Var& b, const char* op) {
    if (!a.valid() || a.tape() != b.tape()) {
        throw std::invalid_argument(std::string(op) + ": operands belong to different tapes");
    }
    return *a.tape();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
}

Shape with_channels(const Shape& s, std::size_t channels) {
    Shape out = s;
    out.back() = channels;
    return out;
}

// y = f(x) elementwise; dfdx(x, y) gives the local derivative.
template <class F, class D>
Var map_unary(const char* op, const Var& x, F f, D dfdx) {
    Tape& tape = *x.tape();
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = f(xv[i]);
    }
    if (!x.requires_grad()) {
        return tape.record(op, std::move(out), false, {});
    }
    const std::size_t xi = x.id();
    return tape.record(op, std::move(out), true, [xi, dfdx](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& xv = t.value(xi);
        const Tensor& yv = t.value(self);
        Tensor& gx = t.grad(xi);
        for (std::size_t i = 0; i < g.size(); ++i) {
            gx[i] += g[i] * dfdx(xv[i], yv[i]);
        }
    });
}

double softplus_value(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

// ---- Var / Tape ---------------------------------------------------------------

const Tensor& Var::value() const {
    return tape_->value(id_);
}

bool Var::requires_grad() const {
    return tape_->requires_grad(id_);
}

Var Tape::constant(Tensor value) {
    return record("constant", std::move(value), false, {});
}

Var Tape::variable(Tensor value) {
    return record("variable", std::move(value), true, {});
}

Var Tape::watch(const Tensor& external, bool requires_grad) {
    if (!external.all_finite()) {
        throw std::domain_error("watch: non-finite leaf value");
    }
    Node node;
    node.external = &external;
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, bool requires_grad, Backward backward) {
    if (!value.all_finite()) {
        throw std::domain_error(std::string(op) + ": produced a non-finite value");
    }
    Node node;
    node.owned = std::move(value);
    node.requires_grad = requires_grad;
    if (requires_grad) {
        node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.owned;
}

Tensor& Tape::grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.has_grad) {
        n.grad = Tensor(value(id).shape());
        n.has_grad = true;
    }
    return n.grad;
}

const Tensor* Tape::grad_if(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.has_grad ? &n.grad : nullptr;
}

void Tape::backward(const Var& loss) {
    if (loss.tape() != this || loss.id() >= nodes_.size()) {
        throw std::invalid_argument("backward: loss was not recorded on this tape");
    }
    if (loss.value().size() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    }
    if (!requires_grad(loss.id())) {
        throw std::invalid_argument("backward: loss is not connected to any differentiable leaf");
    }
    grad(loss.id())[0] += 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.has_grad && n.backward) {
            n.backward(*this, i);
        }
    }
}

// ---- elementwise ----------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    Tape& tape = same_tape(a, b, "add");
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += bv[i];
    }
    const bool rg = a.requires_grad() || b.requires_grad();
    const std::size_t ai = a.id(), bi = b.id();
    return tape.record("add", std::move(out), rg, [ai, bi](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        for (std::size_t id : {ai, bi}) {
            if (t.requires_grad(id)) {
                Tensor& gx = t.grad(id);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gx[i] += g[i];
                }
            }
        }
    });
}

Var sub(const Var& a, const Var& b) {
    Tape& tape = same_tape(a, b, "sub");
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] -= bv[i];
    }
    const bool rg = a.requires_grad() || b.requires_grad();
    const std::size_t ai = a.id(), bi = b.id();
    return tape.record("sub", std::move(out), rg, [ai, bi](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(ai)) {
            Tensor& ga = t.grad(ai);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
            }
        }
        if (t.requires_grad(bi)) {
            Tensor& gb = t.grad(bi);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gb[i] -= g[i];
            }
        }
    });
}

Var mul(const Var& a, const Var& b) {
    Tape& tape = same_tape(a, b, "mul");
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= bv[i];
    }
    const bool rg = a.requires_grad() || b.requires_grad();
    const std::size_t ai = a.id(), bi = b.id();
    return tape.record("mul", std::move(out), rg, [ai, bi](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& av = t.value(ai);
        const Tensor& bv = t.value(bi);
        if (t.requires_grad(ai)) {
            Tensor& ga = t.grad(ai);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * bv[i];
            }
        }
        if (t.requires_grad(bi)) {
            Tensor& gb = t.grad(bi);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gb[i] += g[i] * av[i];
            }
        }
    });
}

Var div(const Var& a, const Var& b) {
    Tape& tape = same_tape(a, b, "div");
    require_same_shape(a.value(), b.value(), "div");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] /= bv[i];
    }
    const bool rg = a.requires_grad() || b.requires_grad();
    const std::size_t ai = a.id(), bi = b.id();
    return tape.record("div", std::move(out), rg, [ai, bi](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& bv = t.value(bi);
        const Tensor& yv = t.value(self);
        if (t.requires_grad(ai)) {
            Tensor& ga = t.grad(ai);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] / bv[i];
            }
        }
        if (t.requires_grad(bi)) {
            Tensor& gb = t.grad(bi);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gb[i] -= g[i] * yv[i] / bv[i];
            }
        }
    });
}

Var scale(const Var& x, double c) {
    return map_unary(
        "scale", x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Var add_scalar(const Var& x, double c) {
    return map_unary(
        "add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var square(const Var& x) {
    return map_unary(
        "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var sqrt(const Var& x) {
    return map_unary(
        "sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Var reciprocal(const Var& x) {
    return map_unary(
        "reciprocal", x, [](double v) { return 1.0 / v; }, [](double, double y) { return -y * y; });
}

Var exp(const Var& x) {
    return map_unary(
        "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(const Var& x) {
    return map_unary(
        "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var elu(const Var& x) {
    return map_unary(
        "elu", x, [](double v) { return v > 0.0 ? v : std::expm1(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : std::exp(v); });
}

Var softplus(const Var& x) {
    return map_unary("softplus", x, softplus_value, [](double v, double) { return sigmoid(v); });
}

Var bounded_std(const Var& raw, double sigma_min) {
    if (!(sigma_min > 0.0)) {
        throw std::invalid_argument("bounded_std: sigma_min must be positive");
    }
    return map_unary(
        "bounded_std", raw, [sigma_min](double v) { return sigma_min + softplus_value(v); },
        [](double v, double) { return sigmoid(v); });
}

// ---- channel operations ---------------------------------------------------------

Var add_bias(const Var& x, const Var& bias) {
    Tape& tape = same_tape(x, bias, "add_bias");
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    const std::size_t c = xv.channels();
    if (bv.size() != c || xv.rank() == 0) {
        throw std::invalid_argument("add_bias: bias of size " + std::to_string(bv.size()) + " for " +
                                    std::to_string(c) + " channels");
    }
    Tensor out = xv;
    const std::size_t rows = xv.rows();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < c; ++j) {
            out[r * c + j] += bv[j];
        }
    }
    const bool rg = x.requires_grad() || bias.requires_grad();
    const std::size_t xi = x.id(), bi = bias.id();
    return tape.record("add_bias", std::move(out), rg, [xi, bi, rows, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(xi)) {
            Tensor& gx = t.grad(xi);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[i] += g[i];
            }
        }
        if (t.requires_grad(bi)) {
            Tensor& gb = t.grad(bi);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < c; ++j) {
                    gb[j] += g[r * c + j];
                }
            }
        }
    });
}

namespace {

void check_weight(const Tensor& xv, const Tensor& wv, const char* op) {
    if (wv.rank() != 2 || xv.rank() == 0 || wv.dim(0) != xv.channels()) {
        throw std::invalid_argument(std::string(op) + ": weight " + shape_str(wv.shape()) +
                                    " incompatible with input " + shape_str(xv.shape()));
    }
}

Var linear_impl(const char* op, const Var& x, const Var& weight, const Var* bias) {
    Tape& tape = same_tape(x, weight, op);
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    check_weight(xv, wv, op);
    const std::size_t rows = xv.rows();
    const std::size_t cin = wv.dim(0);
    const std::size_t cout = wv.dim(1);
    if (bias) {
        same_tape(x, *bias, op);
        if (bias->value().size() != cout) {
            throw std::invalid_argument(std::string(op) + ": bias size mismatch");
        }
    }
    Tensor out(with_channels(xv.shape(), cout));
    if (rows > 0 && cout > 0) {
        auto o = as_mat(out, rows, cout);
        if (cin > 0) {
            o.noalias() = as_mat(xv, rows, cin) * as_mat(wv, cin, cout);
        }
        if (bias) {
            const auto b = as_mat(bias->value(), 1, cout);
            o.rowwise() += b.row(0);
        }
    }
    bool rg = x.requires_grad() || weight.requires_grad() || (bias && bias->requires_grad());
    const std::size_t xi = x.id(), wi = weight.id();
    const std::size_t bi = bias ? bias->id() : 0;
    const bool has_bias = bias != nullptr;
    return tape.record(op, std::move(out), rg,
                       [xi, wi, bi, has_bias, rows, cin, cout](Tape& t, std::size_t self) {
                           if (rows == 0 || cout == 0) {
                               return;
                           }
                           const auto g = as_mat(t.grad(self), rows, cout);
                           if (t.requires_grad(xi) && cin > 0) {
                               as_mat(t.grad(xi), rows, cin).noalias() +=
                                   g * as_mat(t.value(wi), cin, cout).transpose();
                           }
                           if (t.requires_grad(wi) && cin > 0) {
                               as_mat(t.grad(wi), cin, cout).noalias() +=
                                   as_mat(t.value(xi), rows, cin).transpose() * g;
                           }
                           if (has_bias && t.requires_grad(bi)) {
                               Tensor& gb = t.grad(bi);
                               const Tensor& gt = t.grad(self);
                               for (std::size_t r = 0; r < rows; ++r) {
                                   for (std::size_t j = 0; j < cout; ++j) {
                                       gb[j] += gt[r * cout + j];
                                   }
                               }
                           }
                       });
}

}  // namespace

Var linear(const Var& x, const Var& weight) {
    return linear_impl("linear", x, weight, nullptr);
}

Var conv1x1(const Var& x, const Var& weight, const Var& bias) {
    return linear_impl("conv1x1", x, weight, &bias);
}

Var conv1d_causal(const Var& x, const Var& kernel, const Var& bias, std::size_t dilation) {
    Tape& tape = same_tape(x, kernel, "conv1d_causal");
    same_tape(x, bias, "conv1d_causal");
    const Tensor& xv = x.value();
    const Tensor& kv = kernel.value();
    if (dilation < 1) {
        throw std::invalid_argument("conv1d_causal: dilation must be >= 1");
    }
    if (kv.rank() != 3 || kv.dim(0) < 1) {
        throw std::invalid_argument("conv1d_causal: kernel must be (k, Cin, Cout) with k >= 1, got " +
                                    shape_str(kv.shape()));
    }
    if (xv.rank() != 2 && xv.rank() != 3) {
        throw std::invalid_argument("conv1d_causal: input must be (T, C) or (nodes, T, C)");
    }
    const std::size_t k = kv.dim(0);
    const std::size_t cin = kv.dim(1);
    const std::size_t cout = kv.dim(2);
    if (xv.channels() != cin) {
        throw std::invalid_argument("conv1d_causal: kernel expects " + std::to_string(cin) +
                                    " input channels, input has " + std::to_string(xv.channels()));
    }
    if (bias.value().size() != cout) {
        throw std::invalid_argument("conv1d_causal: bias size mismatch");
    }
    const std::size_t time = xv.rank() == 2 ? xv.dim(0) : xv.dim(1);
    const std::size_t nodes = xv.rank() == 2 ? 1 : xv.dim(0);
    if (time < 1) {
        throw std::invalid_argument("conv1d_causal: empty time axis");
    }
    const std::size_t rows = nodes * time;

    Tensor out(with_channels(xv.shape(), cout));
    if (rows > 0 && cout > 0) {
        auto o = as_mat(out, rows, cout);
        o.rowwise() = as_mat(bias.value(), 1, cout).row(0);
        RowMat tap(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cout));
        for (std::size_t s = 0; s < k; ++s) {
            const std::size_t shift = dilation * s;
            if (shift >= time || cin == 0) {
                continue;
            }
            tap.noalias() = as_mat(xv, rows, cin) * ConstMatMap(kv.ptr() + s * cin * cout,
                                                                static_cast<Eigen::Index>(cin),
                                                                static_cast<Eigen::Index>(cout));
            const auto span = static_cast<Eigen::Index>(time - shift);
            for (std::size_t n = 0; n < nodes; ++n) {
                const auto base = static_cast<Eigen::Index>(n * time);
                o.middleRows(base + static_cast<Eigen::Index>(shift), span) += tap.middleRows(base, span);
            }
        }
    }

    const bool rg = x.requires_grad() || kernel.requires_grad() || bias.requires_grad();
    const std::size_t xi = x.id(), ki = kernel.id(), bi = bias.id();
    return tape.record(
        "conv1d_causal", std::move(out), rg,
        [xi, ki, bi, k, cin, cout, nodes, time, rows, dilation](Tape& t, std::size_t self) {
            if (rows == 0 || cout == 0) {
                return;
            }
            const auto g = as_mat(t.grad(self), rows, cout);
            if (t.requires_grad(bi)) {
                auto gb = as_mat(t.grad(bi), 1, cout);
                gb.row(0) += g.colwise().sum();
            }
            if (cin == 0) {
                return;
            }
            const bool gx_needed = t.requires_grad(xi);
            const bool gk_needed = t.requires_grad(ki);
            RowMat shifted(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cout));
            for (std::size_t s = 0; s < k; ++s) {
                const std::size_t shift = dilation * s;
                if (shift >= time) {
                    continue;
                }
                // shifted[n, t] = g[n, t + shift], zero past the end.
                shifted.setZero();
                const auto span = static_cast<Eigen::Index>(time - shift);
                for (std::size_t n = 0; n < nodes; ++n) {
                    const auto base = static_cast<Eigen::Index>(n * time);
                    shifted.middleRows(base, span) = g.middleRows(base + static_cast<Eigen::Index>(shift), span);
                }
                const ConstMatMap ks(t.value(ki).ptr() + s * cin * cout, static_cast<Eigen::Index>(cin),
                                     static_cast<Eigen::Index>(cout));
                if (gx_needed) {
                    as_mat(t.grad(xi), rows, cin).noalias() += shifted * ks.transpose();
                }
                if (gk_needed) {
                    MatMap gks(t.grad(ki).ptr() + s * cin * cout, static_cast<Eigen::Index>(cin),
                               static_cast<Eigen::Index>(cout));
                    gks.noalias() += as_mat(t.value(xi), rows, cin).transpose() * shifted;
                }
            }
        });
}

Var concat_channels(std::span<const Var> parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concat_channels: no inputs");
    }
    Tape& tape = *parts.front().tape();
    const Shape& lead = parts.front().shape();
    if (lead.empty()) {
        throw std::invalid_argument("concat_channels: scalar input");
    }
    std::size_t total = 0;
    std::vector<std::size_t> ids;
    std::vector<std::size_t> widths;
    bool rg = false;
    for (const Var& p : parts) {
        same_tape(parts.front(), p, "concat_channels");
        const Shape& s = p.shape();
        if (s.size() != lead.size() || !std::equal(s.begin(), s.end() - 1, lead.begin())) {
            throw std::invalid_argument("concat_channels: leading shape mismatch " + shape_str(s) + " vs " +
                                        shape_str(lead));
        }
        total += s.back();
        ids.push_back(p.id());
        widths.push_back(s.back());
        rg = rg || p.requires_grad();
    }
    const std::size_t rows = shape_numel(Shape(lead.begin(), lead.end() - 1));
    Tensor out(with_channels(lead, total));
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const Tensor& v = parts[p].value();
        const std::size_t w = widths[p];
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(v.ptr() + r * w, w, out.ptr() + r * total + offset);
        }
        offset += w;
    }
    return tape.record("concat_channels", std::move(out), rg, [ids, widths, rows, total](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        std::size_t offset = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
            const std::size_t w = widths[p];
            if (t.requires_grad(ids[p])) {
                Tensor& gp = t.grad(ids[p]);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < w; ++j) {
                        gp[r * w + j] += g[r * total + offset + j];
                    }
                }
            }
            offset += w;
        }
    });
}

Var slice_channels(const Var& x, std::size_t begin, std::size_t end) {
    const Tensor& xv = x.value();
    const std::size_t c = xv.channels();
    if (xv.rank() == 0 || begin > end || end > c) {
        throw std::invalid_argument("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) +
                                    ") outside " + std::to_string(c) + " channels");
    }
    const std::size_t w = end - begin;
    const std::size_t rows = shape_numel(Shape(xv.shape().begin(), xv.shape().end() - 1));
    Tensor out(with_channels(xv.shape(), w));
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(xv.ptr() + r * c + begin, w, out.ptr() + r * w);
    }
    const std::size_t xi = x.id();
    return x.tape()->record("slice_channels", std::move(out), x.requires_grad(),
                            [xi, rows, c, w, begin](Tape& t, std::size_t self) {
                                const Tensor& g = t.grad(self);
                                Tensor& gx = t.grad(xi);
                                for (std::size_t r = 0; r < rows; ++r) {
                                    for (std::size_t j = 0; j < w; ++j) {
                                        gx[r * c + begin + j] += g[r * w + j];
                                    }
                                }
                            });
}

// ---- node-axis operations -------------------------------------------------------

Var cross_mix(const Var& h, const Tensor& weights) {
    const Tensor& hv = h.value();
    if (hv.rank() != 3 || weights.rank() != 2 || weights.dim(1) != hv.dim(0)) {
        throw std::invalid_argument("cross_mix: weights " + shape_str(weights.shape()) + " incompatible with " +
                                    shape_str(hv.shape()));
    }
    const std::size_t m_count = weights.dim(0);
    const std::size_t n_count = weights.dim(1);
    const std::size_t block = hv.dim(1) * hv.dim(2);
    Tensor out(Shape{m_count, hv.dim(1), hv.dim(2)});
    for (std::size_t m = 0; m < m_count; ++m) {
        double* o = out.ptr() + m * block;
        for (std::size_t n = 0; n < n_count; ++n) {
            const double w = weights.at(m, n);
            if (w == 0.0) {
                continue;
            }
            const double* src = hv.ptr() + n * block;
            for (std::size_t i = 0; i < block; ++i) {
                o[i] += w * src[i];
            }
        }
    }
    const std::size_t hi = h.id();
    return h.tape()->record("cross_mix", std::move(out), h.requires_grad(),
                            [hi, weights, m_count, n_count, block](Tape& t, std::size_t self) {
                                const Tensor& g = t.grad(self);
                                Tensor& gh = t.grad(hi);
                                for (std::size_t m = 0; m < m_count; ++m) {
                                    const double* gm = g.ptr() + m * block;
                                    for (std::size_t n = 0; n < n_count; ++n) {
                                        const double w = weights.at(m, n);
                                        if (w == 0.0) {
                                            continue;
                                        }
                                        double* dst = gh.ptr() + n * block;
                                        for (std::size_t i = 0; i < block; ++i) {
                                            dst[i] += w * gm[i];
                                        }
                                    }
                                }
                            });
}

Var scale_nodes(const Var& x, std::span<const double> factors) {
    const Tensor& xv = x.value();
    if (xv.rank() == 0 || xv.dim(0) != factors.size()) {
        throw std::invalid_argument("scale_nodes: " + std::to_string(factors.size()) + " factors for shape " +
                                    shape_str(xv.shape()));
    }
    const std::size_t block = xv.dim(0) == 0 ? 0 : xv.size() / xv.dim(0);
    Tensor out = xv;
    for (std::size_t m = 0; m < factors.size(); ++m) {
        for (std::size_t i = 0; i < block; ++i) {
            out[m * block + i] *= factors[m];
        }
    }
    std::vector<double> f(factors.begin(), factors.end());
    const std::size_t xi = x.id();
    return x.tape()->record("scale_nodes", std::move(out), x.requires_grad(),
                            [xi, f = std::move(f), block](Tape& t, std::size_t self) {
                                const Tensor& g = t.grad(self);
                                Tensor& gx = t.grad(xi);
                                for (std::size_t m = 0; m < f.size(); ++m) {
                                    for (std::size_t i = 0; i < block; ++i) {
                                        gx[m * block + i] += f[m] * g[m * block + i];
                                    }
                                }
                            });
}

Var broadcast_token(const Var& token, std::size_t count, std::size_t time) {
    const Tensor& tv = token.value();
    if (tv.rank() != 1) {
        throw std::invalid_argument("broadcast_token: token must be a vector");
    }
    const std::size_t c = tv.size();
    Tensor out(Shape{count, time, c});
    for (std::size_t r = 0; r < count * time; ++r) {
        std::copy_n(tv.ptr(), c, out.ptr() + r * c);
    }
    const std::size_t ti = token.id();
    return token.tape()->record("broadcast_token", std::move(out), token.requires_grad(),
                                [ti, count, time, c](Tape& t, std::size_t self) {
                                    const Tensor& g = t.grad(self);
                                    Tensor& gt = t.grad(ti);
                                    for (std::size_t r = 0; r < count * time; ++r) {
                                        for (std::size_t j = 0; j < c; ++j) {
                                            gt[j] += g[r * c + j];
                                        }
                                    }
                                });
}

Var sum(const Var& x) {
    const Tensor& xv = x.value();
    double s = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        s += xv[i];
    }
    const std::size_t xi = x.id();
    return x.tape()->record("sum", Tensor::scalar(s), x.requires_grad(), [xi](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        Tensor& gx = t.grad(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += g;
        }
    });
}

// ---- gradient checking ------------------------------------------------------------

GradCheckResult finite_diff_check(const ScalarProgram& program, std::span<Tensor* const> params, double h,
                                  double tol) {
    if (!(h > 0.0)) {
        throw std::invalid_argument("finite_diff_check: step must be positive");
    }
    auto evaluate = [&]() {
        Tape tape;
        std::vector<Var> leaves;
        leaves.reserve(params.size());
        for (Tensor* p : params) {
            leaves.push_back(tape.watch(*p));
        }
        return program(tape, leaves).value().item();
    };

    Tape tape;
    std::vector<Var> leaves;
    for (Tensor* p : params) {
        leaves.push_back(tape.watch(*p));
    }
    const Var loss = program(tape, leaves);
    const double f0 = loss.value().item();
    if (evaluate() != f0 || evaluate() != f0) {
        throw std::logic_error("finite_diff_check: program is not deterministic; inject noise as a fixed input");
    }
    const bool connected = loss.requires_grad();
    if (connected) {
        tape.backward(loss);
    }

    GradCheckResult result;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& value = *params[p];
        const Tensor* ad = connected ? tape.grad_if(leaves[p].id()) : nullptr;
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double original = value[i];
            value[i] = original + h;
            const double fp = evaluate();
            value[i] = original - h;
            const double fm = evaluate();
            value[i] = original;
            const double g_fd = (fp - fm) / (2.0 * h);
            const double g_ad = ad ? (*ad)[i] : 0.0;
            const double err = std::abs(g_ad - g_fd) / std::max(1e-8, std::abs(g_ad) + std::abs(g_fd));
            ++result.entries;
            if (err > result.max_rel_error) {
                result.max_rel_error = err;
                result.worst_param = p;
                result.worst_index = i;
                result.worst_ad = g_ad;
                result.worst_fd = g_fd;
            }
        }
    }
    result.passed = result.max_rel_error < tol;
    return result;
}

}  // namespace stgnp
