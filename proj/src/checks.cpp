#include "stgnp/checks.hpp"

#include <random>

#include "stgnp/graph.hpp"
#include "stgnp/train.hpp"

namespace stgnp {

ToyElbo make_toy_elbo(std::uint64_t seed) {
    StgnpConfig c;
    c.layers = 2;
    c.kernel_size = 2;
    c.det_channels = {3, 4};
    c.latent_channels = {2, 3};
    c.d0 = 3;
    c.likelihood_hidden = 5;
    c.likelihood_layers = 2;
    c.K = 2;
    c.window = 8;
    c.d_x = 2;
    c.d_y = 1;
    ToyElbo toy{StgnpModel(c), {}, {}, seed + 1};
    xavier_init(toy.model, seed);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::vector<Coord> coords{{0.0, 0.0}, {1.0, 0.2}, {0.3, 1.1}, {1.2, 1.0}, {0.6, 0.5}};
    GraphConfig g;
    g.distance = DistanceKind::euclidean;
    g.threshold = 0.05;
    const std::vector<std::size_t> ctx{0, 1, 2, 3}, tgt{4};
    toy.inputs.khop = khop_cross_adjacency(build_adjacency(coords, g), c.K, ctx, tgt);

    auto fill = [&](Shape s) {
        Tensor t(std::move(s));
        for (double& v : t.values()) {
            v = normal(rng);
        }
        return t;
    };
    toy.inputs.y_context = fill({4, c.window, 1});
    toy.inputs.x_context = fill({4, c.window, 2});
    toy.inputs.x_target = fill({1, c.window, 2});
    toy.target.y = fill({1, c.window, 1});
    toy.target.mask = Tensor(Shape{1, c.window, 1}, 1.0);
    toy.target.mask[3] = 0.0;
    return toy;
}

GradCheckResult check_elbo_gradient(std::uint64_t seed, double h, double tol) {
    ToyElbo toy = make_toy_elbo(seed);
    std::vector<Tensor*> params;
    for (Parameter& p : toy.model.parameters()) {
        params.push_back(&p.value);
    }
    const ScalarProgram program = [&toy](Tape& tape, std::span<const Var> leaves) {
        const ModelVars mv = bind_leaves(toy.model, std::vector<Var>(leaves.begin(), leaves.end()));
        return elbo(tape, mv, toy.inputs, toy.target, toy.noise_seed).loss;
    };
    return finite_diff_check(program, params, h, tol);
}

}  // namespace stgnp
