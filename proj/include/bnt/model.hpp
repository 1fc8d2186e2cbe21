#pragma once

#include <array>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bnt/matrix.hpp"
#include "bnt/rng.hpp"

namespace bnt {

enum class Readout { OCREAD, MEAN, MAX, SUM, CONCAT };
enum class CentersMode { ORTHONORMAL, RANDOM_UNIT, LEARNABLE };
enum class NodeFeatureMode { PROFILE, PROFILE_IDENTITY, PROFILE_EIGEN };

std::string_view to_string(Readout r);
std::string_view to_string(CentersMode c);
std::string_view to_string(NodeFeatureMode f);
/// Case-insensitive; "random" is accepted for RANDOM_UNIT. Throws std::invalid_argument.
Readout parse_readout(std::string_view s);
CentersMode parse_centers_mode(std::string_view s);
NodeFeatureMode parse_feature_mode(std::string_view s);

struct ModelConfig {
    std::size_t nodes = 32;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t clusters = 4;
    std::size_t head_dim = 0;  ///< 0 selects ceil(nodes / heads)
    std::vector<std::size_t> mlp_hidden{256, 32};
    Readout readout = Readout::OCREAD;
    CentersMode centers = CentersMode::ORTHONORMAL;
    NodeFeatureMode features = NodeFeatureMode::PROFILE;
    std::size_t eigen_k = 0;

    std::size_t resolved_head_dim() const;
    /// Width of the node features fed to the first attention layer.
    std::size_t input_width() const;
    /// Length of the flattened readout vector fed to the MLP.
    std::size_t readout_width() const;
    /// Throws std::invalid_argument on inconsistent settings.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct AttentionHead {
    Matrix query;  ///< head_dim x in_width
    Matrix key;    ///< head_dim x in_width
    Matrix value;  ///< head_dim x in_width

    friend bool operator==(const AttentionHead&, const AttentionHead&) = default;
};

struct AttentionLayerParams {
    std::vector<AttentionHead> heads;
    Matrix output;  ///< (heads * head_dim) x V

    friend bool operator==(const AttentionLayerParams&, const AttentionLayerParams&) = default;
};

struct DenseLayer {
    Matrix weight;  ///< out x in
    Matrix bias;    ///< 1 x out

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct ModelParams {
    std::vector<AttentionLayerParams> layers;
    Matrix centers;  ///< K x V; empty unless the readout is OCREAD
    std::vector<DenseLayer> mlp;

    /// Visits every tensor in declaration order: layer by layer (heads' Q, K, V,
    /// then W_O), centers, then MLP weight/bias pairs.
    void for_each_tensor(const std::function<void(const std::string& name, Matrix&)>& fn);
    void for_each_tensor(const std::function<void(const std::string& name, const Matrix&)>& fn) const;

    std::size_t parameter_count() const;

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Same layout as `p`, all zeros.
ModelParams zeros_like(const ModelParams& p);

/// Whether the optimizer may update `name` under this config.
bool is_learnable(const ModelConfig& config, const std::string& name);

/// Correctly shaped, zero-filled parameters for `config`.
ModelParams allocate_params(const ModelConfig& config);

/// Xavier-uniform weights, zero biases, centers per config.centers_mode.
/// ORTHONORMAL centers re-draw on DegenerateBasis (up to 8 attempts).
ModelParams init_params(const ModelConfig& config, Rng& rng);

/// Applies the node-feature variant to a connectivity matrix.
Matrix node_feature(const Matrix& x, NodeFeatureMode mode, std::size_t k_eigen);

/// One multi-head self-attention layer; returns a V x V embedding.
Matrix mhsa_layer(const Matrix& z_prev, const AttentionLayerParams& params);

struct OcreadOutput {
    Matrix assignment;  ///< V x K soft assignment P
    Matrix pooled;      ///< K x V, P^T Z
};

OcreadOutput ocread(const Matrix& z_last, const Matrix& centers);

/// MEAN/SUM/MAX reduce over nodes; CONCAT flattens row-major.
std::vector<double> baseline_readout(const Matrix& z_last, Readout kind);

struct HeadTrace {
    Matrix query, key, value, attention;
};

struct LayerTrace {
    Matrix input;
    std::vector<HeadTrace> heads;
    Matrix concat;
};

struct ForwardTrace {
    std::vector<LayerTrace> layers;
    Matrix output;      ///< Z^L
    Matrix assignment;  ///< OCREAD only
    Matrix pooled;      ///< OCREAD only
    std::vector<std::size_t> argmax;  ///< MAX only: winning node per feature
    std::vector<std::vector<double>> activations;  ///< MLP inputs per layer
    std::vector<std::vector<double>> preactivations;
    std::array<double, 2> logits{};
};

struct ForwardResult {
    std::array<double, 2> logits{};
    ForwardTrace trace;
};

/// Forward pass on prepared node features (see prepare_input).
ForwardResult forward_features(const Matrix& features, const ModelParams& params, const ModelConfig& config);

/// Full forward pass on a raw connectivity matrix. Throws on non-finite input.
ForwardResult forward(const Matrix& x, const ModelParams& params, const ModelConfig& config);

/// Node features for `x` according to config.features.
Matrix prepare_input(const Matrix& x, const ModelConfig& config);

/// Softmax probability of class 1.
double positive_probability(const std::array<double, 2>& logits);

struct LabeledInput {
    Matrix features;  ///< output of prepare_input
    int label = 0;
};

struct LossAndGrad {
    double loss = 0.0;
    ModelParams grads;
};

/// Mean cross-entropy over the batch and its exact gradient. Centers receive a
/// gradient only in LEARNABLE mode. Throws on an empty batch.
LossAndGrad loss_and_grad(std::span<const LabeledInput> batch, const ModelParams& params,
                          const ModelConfig& config);

/// Mean cross-entropy only.
double batch_loss(std::span<const LabeledInput> batch, const ModelParams& params, const ModelConfig& config);

}  // namespace bnt
