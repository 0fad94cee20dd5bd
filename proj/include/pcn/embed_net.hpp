#ifndef PCN_EMBED_NET_HPP
#define PCN_EMBED_NET_HPP

#include <cstdint>
#include <vector>

#include "pcn/matrix.hpp"

namespace pcn {

// Fully connected embedding trunk: tanh hidden layers, linear output layer.
// weights[l] has shape layer_dims[l+1] x layer_dims[l].
struct EmbedNet {
    std::vector<std::size_t> layer_dims;
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;

    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t embed_dim() const { return layer_dims.back(); }
    std::size_t n_layers() const { return weights.size(); }
};

// Records one forward pass. activations[0] is the input batch and
// activations[l+1] the post-activation output of layer l. Valid only while
// the net it points at is unchanged.
struct ForwardTape {
    const EmbedNet* net = nullptr;
    std::vector<Matrix> activations;
};

// Gradients with the exact shapes of EmbedNet parameters.
struct NetGradients {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;

    NetGradients() = default;
    explicit NetGradients(const EmbedNet& net);

    void add(const NetGradients& other);
    void scale(double factor);
    bool all_finite() const;
};

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-5;
};

struct AdamState {
    std::vector<Matrix> m_weights, v_weights;
    std::vector<std::vector<double>> m_biases, v_biases;
    long step_count = 0;
    AdamConfig config;

    AdamState() = default;
    AdamState(const EmbedNet& net, AdamConfig cfg);
};

// Uniform init scaled by 1/sqrt(fan_in), zero biases, fully seed-determined.
EmbedNet net_init(const std::vector<std::size_t>& layer_dims, uint64_t seed);

// Embeds a batch (N x input_dim). Fills *tape when given so net_gradients can
// run an exact reverse pass later.
Matrix net_forward(const EmbedNet& net, const Matrix& batch, ForwardTape* tape = nullptr);

// Reverse pass: upstream is dLoss/dEmbeddings (N x embed_dim).
NetGradients net_gradients(const ForwardTape& tape, const Matrix& upstream);

// One Adam step with bias correction; L2 weight decay enters as an additive
// lambda*theta term in the gradient before the moment updates.
void adam_step(EmbedNet& net, const NetGradients& grads, AdamState& state);

// The same update on one flat parameter block (used by the CE head).
// step_count is the 1-based step the block is at after this call.
void adam_update_flat(std::span<double> params, std::span<const double> grads,
                      std::span<double> m, std::span<double> v, long step_count,
                      const AdamConfig& cfg);

}  // namespace pcn

#endif  // PCN_EMBED_NET_HPP
