#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

// Minimal dense-network substrate: explicit weight matrices, rectifier
// hidden layers, exact reverse-mode gradients, canonical Adam, and a
// finite-difference checker that keeps the backward pass honest.

namespace meshrl::nn {

// Row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

// Fully connected network. weights[l] has shape dims[l+1] x dims[l]; hidden
// layers apply the rectifier, the output layer is linear.
struct DenseNet {
    std::vector<int> layer_dims;
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;

    std::size_t n_layers() const { return weights.size(); }
    std::size_t n_params() const;
};

// Per-layer activations kept from a forward pass; acts[0] is the input and
// acts[L] the output.
struct Cache {
    std::vector<std::vector<double>> acts;
};

// Batched variant: column b of acts[l] is sample b at layer l.
struct BatchCache {
    std::vector<Matrix> acts;
};

// Parameter-shaped gradients plus the gradient at the network input.
struct Grads {
    std::vector<Matrix> d_weights;
    std::vector<std::vector<double>> d_biases;
    std::vector<double> d_input;

    void add(const Grads& other);  // elementwise accumulate (ignores d_input)
};

// Adam accumulators, one slot per parameter.
struct AdamState {
    double learning_rate = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::int64_t step = 0;
    std::vector<Matrix> m_w, v_w;
    std::vector<std::vector<double>> m_b, v_b;
};

AdamState adam_init(const DenseNet& net, double learning_rate);

// Weights uniform in (-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
DenseNet net_init(const std::vector<int>& layer_dims, std::uint64_t seed);

std::vector<double> forward(const DenseNet& net, const std::vector<double>& x, Cache* cache);
Matrix forward_batch(const DenseNet& net, const Matrix& x, BatchCache* cache);

// Exact gradients for the loss whose derivative w.r.t. the network output is
// `d_out`. The cache must come from a forward pass over the same input.
Grads backward(const DenseNet& net, const Cache& cache, const std::vector<double>& d_out);
Grads backward_batch(const DenseNet& net, const BatchCache& cache, const Matrix& d_out);

// Mean squared error over the vector and its gradient 2(pred - target)/n.
std::pair<double, std::vector<double>> mse(const std::vector<double>& pred,
                                           const std::vector<double>& target);

// One Adam update in place. Throws NumericError on non-finite gradients,
// naming the offending layer.
void adam_step(DenseNet& net, const Grads& grads, AdamState& state);

// Central-difference check of backward() against the MSE loss, h = 1e-5.
// Returns the maximum relative error over all parameters. Guarded to nets
// of at most 10^4 parameters.
double grad_check(const DenseNet& net, const std::vector<double>& x,
                  const std::vector<double>& target);

// Optional standardization block stored alongside weights.
struct ScalerBlock {
    std::vector<double> in_mean, in_std, out_mean, out_std;
};

// Structured text (JSON) weight files; values survive the round trip
// exactly. `profile` is free-form metadata.
void save_net(const DenseNet& net, const std::string& path,
              const std::optional<ScalerBlock>& scaler = std::nullopt,
              const std::string& profile = "");
struct LoadedNet {
    DenseNet net;
    std::optional<ScalerBlock> scaler;
    std::string profile;
};
LoadedNet load_net(const std::string& path);

}  // namespace meshrl::nn
