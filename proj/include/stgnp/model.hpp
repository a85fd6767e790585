#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "stgnp/autodiff.hpp"
#include "stgnp/gaussian.hpp"
#include "stgnp/gba.hpp"

namespace stgnp {

struct StgnpConfig {
    std::size_t layers = 3;
    std::size_t kernel_size = 3;
    std::vector<std::size_t> det_channels{16, 32, 64};
    std::vector<std::size_t> latent_channels{16, 32, 64};
    std::size_t d0 = 16;
    std::size_t likelihood_hidden = 128;
    std::size_t likelihood_layers = 3;
    std::size_t K = 2;
    std::size_t window = 24;
    std::size_t d_x = 2;
    std::size_t d_y = 1;
    double sigma_min_latent = kLatentSigmaMin;
    double sigma_min_likelihood = kLikelihoodSigmaMin;

    void validate() const;
    // Dilation of layer l (0-based): 2^l.
    std::size_t dilation(std::size_t l) const { return std::size_t{1} << l; }
    // Width of the representation entering layer l (0-based).
    std::size_t input_width(std::size_t l) const { return l == 0 ? d0 : det_channels[l - 1]; }
    // Width of the latent sample fed into layer l's prior encoder.
    std::size_t above_width(std::size_t l) const {
        return l + 1 < layers ? latent_channels[l + 1] : latent_channels[layers - 1];
    }
    // Time steps one output depends on: 1 + (k - 1) * (2^L - 1).
    std::size_t receptive_field() const { return 1 + (kernel_size - 1) * ((std::size_t{1} << layers) - 1); }
};

enum class ParamKind { weight, bias, token };

struct ParamInfo {
    ParamKind kind = ParamKind::weight;
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
};

/// Learnable state of the network. Parameters are created zero-valued in a
/// fixed order; see xavier_init for initialization.
class StgnpModel {
public:
    explicit StgnpModel(StgnpConfig config);

    const StgnpConfig& config() const noexcept { return config_; }
    std::vector<Parameter>& parameters() noexcept { return params_; }
    const std::vector<Parameter>& parameters() const noexcept { return params_; }
    const std::vector<ParamInfo>& param_info() const noexcept { return info_; }

    Parameter& parameter(std::string_view name);
    const Parameter& parameter(std::string_view name) const;
    std::size_t index_of(std::string_view name) const;
    std::size_t scalar_count() const;
    void zero_grad();

private:
    void add(std::string name, Shape shape, ParamInfo info);

    StgnpConfig config_;
    std::vector<Parameter> params_;
    std::vector<ParamInfo> info_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct LinearVars {
    Var weight;
    Var bias;
};

struct LayerVars {
    std::vector<Var> csgcn;  // K + 1 matrices, no bias
    Var dc_kernel;
    Var dc_bias;
    LinearVars skip;
    LinearVars cov;
    EncoderVars enc_z;
    EncoderVars enc_r;
};

/// A model's parameters bound to a tape as leaves.
struct ModelVars {
    const StgnpConfig* config = nullptr;
    std::vector<Var> leaves;  // parallel to StgnpModel::parameters()
    Var token;
    Var embed;
    std::vector<LayerVars> layers;
    std::vector<LinearVars> likelihood;
};

ModelVars bind(Tape& tape, const StgnpModel& model, bool requires_grad = true);
/// Same, from leaves already on a tape (one per parameter, in order).
ModelVars bind_leaves(const StgnpModel& model, std::vector<Var> leaves);

/// Everything the network sees for one window. Node-major tensors are
/// (nodes, T, channels); missing context values are already zero.
struct WindowInputs {
    Tensor y_context;             // N x T x d_y
    Tensor x_context;             // N x T x d_x
    Tensor x_target;              // M x T x d_x
    std::vector<Tensor> khop;     // K + 1 blocks, each M x N
};

struct TargetObservations {
    Tensor y;     // M x T x d_y
    Tensor mask;  // M x T x d_y, 1 = observed
};

struct LayerState {
    Var v;  // M x T x d_l
    Var h;  // N x T x d_l
};

enum class SampleMode { mean, sample };

// ---- deterministic stage -----------------------------------------------------
Var embed_context(const ModelVars& mv, const Var& y);
Var csgcn(const Var& v_prev, const Var& h_prev, std::span<const Tensor> khop, std::span<const Var> weights);
Var context_update(const LayerVars& layer, const Var& h_prev, const Var& x_context, std::size_t dilation);
Var target_update(const LayerVars& layer, const Var& v_prev, const Var& h_prev, const Var& x_target,
                  std::span<const Tensor> khop, std::size_t dilation);

/// H^0..H^L for the context nodes.
std::vector<Var> context_stack(const ModelVars& mv, const Var& y_context, const Var& x_context);
/// V^1..V^L for targets starting from V^0, given H^0..H^{L-1}.
std::vector<Var> target_stack(const ModelVars& mv, const Var& v0, std::span<const Var> h, const Var& x_target,
                              std::span<const Tensor> khop);
std::vector<LayerState> strl_forward(Tape& tape, const ModelVars& mv, const WindowInputs& in);

// ---- stochastic stage ----------------------------------------------------------
GaussianVar likelihood_head(const ModelVars& mv, std::span<const Var> z_layers, const Var& x_target);

struct GenerativeResult {
    std::vector<GaussianVar> priors;  // per layer (index 0 = layer 1), after aggregation
    std::vector<Var> samples;
    GaussianVar predictive;
};

GenerativeResult generative_forward(Tape& tape, const ModelVars& mv, const WindowInputs& in, SampleMode mode,
                                    std::uint64_t seed);

struct PosteriorResult {
    std::vector<GaussianVar> posteriors;
    std::vector<Var> samples;
};

PosteriorResult posterior_forward(Tape& tape, const ModelVars& mv, const WindowInputs& in, const Tensor& y_target,
                                  std::uint64_t seed);

struct ElboResult {
    Var loss;
    double recon = 0.0;
    std::vector<double> kl_per_layer;  // index 0 = layer 1
};

/// loss = -log p(Y | X, Z ~ q) + sum_l KL(q^l || p^l), one sample per layer.
ElboResult elbo(Tape& tape, const ModelVars& mv, const WindowInputs& in, const TargetObservations& target,
                std::uint64_t seed);

/// Predictive distribution over the targets without recording gradients.
DiagGaussian predict(const StgnpModel& model, const WindowInputs& in, SampleMode mode = SampleMode::mean,
                     std::uint64_t seed = 0);

/// Standard normal draws for the latent samples of each layer, top layer first.
std::vector<Tensor> latent_noise(const StgnpConfig& config, std::size_t targets, std::uint64_t seed);

}  // namespace stgnp
