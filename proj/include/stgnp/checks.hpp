#pragma once

#include <cstdint>

#include "stgnp/autodiff.hpp"
#include "stgnp/model.hpp"

namespace stgnp {

/// A small fully specified ELBO problem: 4 contexts, 1 target, T = 8, 2 layers.
struct ToyElbo {
    StgnpModel model;
    WindowInputs inputs;
    TargetObservations target;
    std::uint64_t noise_seed = 0;
};

ToyElbo make_toy_elbo(std::uint64_t seed);

/// Finite-difference check of d(loss)/d(every parameter) on the toy problem.
GradCheckResult check_elbo_gradient(std::uint64_t seed, double h, double tol);

}  // namespace stgnp
