#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

namespace clb {

enum class Activation { relu, tanh };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

/// Dense classifier description. `hidden_layers` lists hidden widths in
/// order; the output layer is linear with `num_classes` logits.
struct ModelSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_layers;
    std::size_t num_classes = 0;
    Activation activation = Activation::relu;
    std::uint64_t seed = 0;

    void validate() const;  // throws ConfigError
    bool operator==(const ModelSpec&) const = default;
};

// Row-major float matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

    float& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    float at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    const float* row(std::size_t i) const { return data.data() + i * cols; }
    float* row(std::size_t i) { return data.data() + i * cols; }
    void fill(float v) { std::fill(data.begin(), data.end(), v); }

    bool operator==(const Matrix&) const = default;
};

struct LayerParams {
    Matrix weights;  // fan_in x fan_out
    std::vector<float> bias;  // fan_out

    bool operator==(const LayerParams&) const = default;
};

struct Params {
    std::vector<LayerParams> layers;

    bool operator==(const Params&) const = default;
    bool finite() const;
};

struct Batch {
    Matrix features;  // N x F
    std::vector<std::int32_t> labels;  // N, values in [0, num_classes)

    std::size_t size() const { return labels.size(); }
    bool empty() const { return labels.empty(); }
};

struct LossAndGrad {
    double loss = 0.0;
    Params grads;
};

// Glorot-uniform weights, zero biases, deterministic in spec.seed.
Params init_params(const ModelSpec& spec);

// Logits, N x num_classes. Throws DimensionError on shape mismatch.
Matrix forward(const ModelSpec& spec, const Params& params, const Batch& batch);

// Softmax cross-entropy, mean over the batch; gradients shaped like params.
LossAndGrad loss_and_grad(const ModelSpec& spec, const Params& params, const Batch& batch);

// p' = p - lr * g. Throws ConfigError for lr <= 0 and DimensionError on
// shape mismatch; the result is checked finite.
Params sgd_step(const Params& params, const Params& grads, double lr);

// Top-k class indices per sample, descending logit, ties to the lower index.
std::vector<std::vector<std::int32_t>> predict_topk(const ModelSpec& spec, const Params& params,
                                                    const Batch& batch, std::size_t k);

// Weights blob: magic "CLBW", then little-endian u32 format version and
// layer count, then per layer u32 rows, u32 cols, row-major weight floats,
// bias floats. Byte-exact round-trip.
std::vector<std::uint8_t> serialize_weights(const Params& params);
Params deserialize_weights(const std::vector<std::uint8_t>& bytes);

}  // namespace clb
