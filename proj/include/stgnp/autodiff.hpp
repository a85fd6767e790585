#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "stgnp/tensor.hpp"

namespace stgnp {

/// A named learnable tensor with its accumulated gradient.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    bool valid() const noexcept { return tape_ != nullptr; }
    Tape* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Records forward operations and replays their adjoints in reverse order.
/// Not thread-safe; use one tape per forward/backward pass.
class Tape {
public:
    // Receives the tape and the id of the node being differentiated.
    using Backward = std::function<void(Tape&, std::size_t)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var variable(Tensor value);
    // Leaf that reads `external` in place; the tensor must outlive the tape.
    Var watch(const Tensor& external, bool requires_grad = true);

    Var record(const char* op, Tensor value, bool requires_grad, Backward backward);

    const Tensor& value(std::size_t id) const;
    Tensor& grad(std::size_t id);
    // Null when no adjoint ever reached the node.
    const Tensor* grad_if(std::size_t id) const;
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

    void backward(const Var& loss);
    void clear() { nodes_.clear(); }
    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor owned;
        const Tensor* external = nullptr;
        Tensor grad;
        bool has_grad = false;
        bool requires_grad = false;
        Backward backward;
    };
    std::deque<Node> nodes_;
};

// ---- elementwise -----------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& x, double c);
Var add_scalar(const Var& x, double c);
Var square(const Var& x);
Var sqrt(const Var& x);
Var reciprocal(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var elu(const Var& x);
Var softplus(const Var& x);

/// sigma_min + softplus(raw), elementwise.
Var bounded_std(const Var& raw, double sigma_min);

// ---- channel (last-dim) operations -----------------------------------------
Var add_bias(const Var& x, const Var& bias);
// x[..., Cin] * W[Cin, Cout]
Var linear(const Var& x, const Var& weight);
Var conv1x1(const Var& x, const Var& weight, const Var& bias);
/// Dilated causal convolution along time. `x` is (T, Cin) or (nodes, T, Cin),
/// `kernel` is (k, Cin, Cout). Reads before t = 0 are zero.
Var conv1d_causal(const Var& x, const Var& kernel, const Var& bias, std::size_t dilation);
Var concat_channels(std::span<const Var> parts);
Var slice_channels(const Var& x, std::size_t begin, std::size_t end);

// ---- node-axis operations on (nodes, T, C) tensors -------------------------
/// out[m] = sum_n weights[m, n] * h[n], weights constant (M x N).
Var cross_mix(const Var& h, const Tensor& weights);
/// out[m] = factors[m] * x[m].
Var scale_nodes(const Var& x, std::span<const double> factors);
/// (C) -> (count, T, C) with every slot equal to the token.
Var broadcast_token(const Var& token, std::size_t count, std::size_t time);

// ---- reductions -------------------------------------------------------------
Var sum(const Var& x);

// ---- gradient checking ------------------------------------------------------
using ScalarProgram = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t entries = 0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double worst_ad = 0.0;
    double worst_fd = 0.0;
    bool passed = true;
};

/// Compares reverse-mode gradients of `program` against central differences
/// for every entry of `params`. Each entry's error is
/// |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
GradCheckResult finite_diff_check(const ScalarProgram& program, std::span<Tensor* const> params, double h,
                                  double tol);

}  // namespace stgnp
