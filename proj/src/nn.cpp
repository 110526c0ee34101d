#include "clb/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "clb/errors.hpp"
#include "clb/rng.hpp"

namespace clb {

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw ConfigError("UnknownActivation", "unknown activation '" + s + "'");
}

std::string to_string(Activation a) {
    return a == Activation::relu ? "relu" : "tanh";
}

void ModelSpec::validate() const {
    if (input_dim < 1) throw ConfigError("InvalidModel", "input_dim must be >= 1", "model.input_dim");
    if (num_classes < 2) throw ConfigError("InvalidModel", "num_classes must be >= 2", "model.num_classes");
    for (std::size_t h : hidden_layers)
        if (h < 1) throw ConfigError("InvalidModel", "hidden layer width must be >= 1", "model.hidden_layers");
}

bool Params::finite() const {
    for (const auto& layer : layers) {
        for (float w : layer.weights.data)
            if (!std::isfinite(w)) return false;
        for (float b : layer.bias)
            if (!std::isfinite(b)) return false;
    }
    return true;
}

namespace {

std::vector<std::size_t> layer_widths(const ModelSpec& spec) {
    std::vector<std::size_t> widths;
    widths.push_back(spec.input_dim);
    for (std::size_t h : spec.hidden_layers) widths.push_back(h);
    widths.push_back(spec.num_classes);
    return widths;
}

void check_batch(const ModelSpec& spec, const Batch& batch) {
    if (batch.empty()) throw EmptyBatch("batch has no samples");
    if (batch.features.rows != batch.labels.size())
        throw DimensionError("feature rows do not match label count");
    if (batch.features.cols != spec.input_dim)
        throw DimensionError("batch feature dim " + std::to_string(batch.features.cols) +
                             " does not match model input dim " + std::to_string(spec.input_dim));
}

void check_params(const ModelSpec& spec, const Params& params) {
    auto widths = layer_widths(spec);
    if (params.layers.size() + 1 != widths.size())
        throw DimensionError("params layer count does not match model spec");
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& layer = params.layers[l];
        if (layer.weights.rows != widths[l] || layer.weights.cols != widths[l + 1] ||
            layer.bias.size() != widths[l + 1])
            throw DimensionError("params shapes do not match model spec at layer " + std::to_string(l));
    }
}

// z = x * W + b for one layer, all samples.
Matrix affine(const Matrix& x, const LayerParams& layer) {
    Matrix z(x.rows, layer.weights.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const float* xi = x.row(i);
        float* zi = z.row(i);
        for (std::size_t j = 0; j < layer.weights.cols; ++j) zi[j] = layer.bias[j];
        for (std::size_t kk = 0; kk < layer.weights.rows; ++kk) {
            const float xv = xi[kk];
            if (xv == 0.0f) continue;
            const float* wrow = layer.weights.row(kk);
            for (std::size_t j = 0; j < layer.weights.cols; ++j) zi[j] += xv * wrow[j];
        }
    }
    return z;
}

void apply_activation(Matrix& z, Activation act) {
    if (act == Activation::relu) {
        for (float& v : z.data) v = v > 0.0f ? v : 0.0f;
    } else {
        for (float& v : z.data) v = std::tanh(v);
    }
}

struct ForwardTrace {
    // activations[0] is the input; activations[l+1] the output of layer l
    // (post-activation for hidden layers, raw logits for the last).
    std::vector<Matrix> activations;
    std::vector<Matrix> pre_activations;  // per hidden layer
};

ForwardTrace forward_trace(const ModelSpec& spec, const Params& params, const Batch& batch) {
    check_batch(spec, batch);
    check_params(spec, params);
    ForwardTrace trace;
    trace.activations.push_back(batch.features);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        Matrix z = affine(trace.activations.back(), params.layers[l]);
        if (l + 1 < params.layers.size()) {
            trace.pre_activations.push_back(z);
            apply_activation(z, spec.activation);
        }
        trace.activations.push_back(std::move(z));
    }
    return trace;
}

}  // namespace

Params init_params(const ModelSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    auto widths = layer_widths(spec);
    Params params;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        LayerParams layer;
        layer.weights = Matrix(widths[l], widths[l + 1]);
        const double a = std::sqrt(6.0 / static_cast<double>(widths[l] + widths[l + 1]));
        for (float& w : layer.weights.data) w = static_cast<float>(rng.uniform(-a, a));
        layer.bias.assign(widths[l + 1], 0.0f);
        params.layers.push_back(std::move(layer));
    }
    return params;
}

Matrix forward(const ModelSpec& spec, const Params& params, const Batch& batch) {
    return forward_trace(spec, params, batch).activations.back();
}

LossAndGrad loss_and_grad(const ModelSpec& spec, const Params& params, const Batch& batch) {
    for (std::size_t i = 0; i < batch.labels.size(); ++i)
        if (batch.labels[i] < 0 || static_cast<std::size_t>(batch.labels[i]) >= spec.num_classes)
            throw LabelError("label " + std::to_string(batch.labels[i]) + " out of range at row " +
                             std::to_string(i));

    ForwardTrace trace = forward_trace(spec, params, batch);
    const Matrix& logits = trace.activations.back();
    const std::size_t n = batch.size();
    const std::size_t c = spec.num_classes;

    // Softmax probabilities and mean negative log-likelihood; the loss is
    // accumulated in double to keep goldens stable.
    Matrix delta(n, c);  // dL/dlogits
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const float* zi = logits.row(i);
        float zmax = zi[0];
        for (std::size_t j = 1; j < c; ++j) zmax = std::max(zmax, zi[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(static_cast<double>(zi[j] - zmax));
        const double log_denom = std::log(denom);
        const auto label = static_cast<std::size_t>(batch.labels[i]);
        loss_sum += log_denom - static_cast<double>(zi[label] - zmax);
        float* di = delta.row(i);
        for (std::size_t j = 0; j < c; ++j) {
            const double p = std::exp(static_cast<double>(zi[j] - zmax) - log_denom);
            di[j] = static_cast<float>((p - (j == label ? 1.0 : 0.0)) / static_cast<double>(n));
        }
    }

    LossAndGrad out;
    out.loss = loss_sum / static_cast<double>(n);

    // Backward pass.
    out.grads.layers.resize(params.layers.size());
    Matrix dz = std::move(delta);
    for (std::size_t l = params.layers.size(); l-- > 0;) {
        const Matrix& input = trace.activations[l];
        LayerParams& g = out.grads.layers[l];
        g.weights = Matrix(params.layers[l].weights.rows, params.layers[l].weights.cols);
        g.bias.assign(params.layers[l].bias.size(), 0.0f);

        for (std::size_t i = 0; i < dz.rows; ++i) {
            const float* dzi = dz.row(i);
            const float* xi = input.row(i);
            for (std::size_t j = 0; j < g.bias.size(); ++j) g.bias[j] += dzi[j];
            for (std::size_t kk = 0; kk < g.weights.rows; ++kk) {
                const float xv = xi[kk];
                if (xv == 0.0f) continue;
                float* grow = g.weights.row(kk);
                for (std::size_t j = 0; j < g.weights.cols; ++j) grow[j] += xv * dzi[j];
            }
        }

        if (l == 0) break;

        // dL/d(previous activation) = dz * W^T, then through the activation.
        const Matrix& w = params.layers[l].weights;
        Matrix dprev(dz.rows, w.rows);
        for (std::size_t i = 0; i < dz.rows; ++i) {
            const float* dzi = dz.row(i);
            float* dpi = dprev.row(i);
            for (std::size_t kk = 0; kk < w.rows; ++kk) {
                const float* wrow = w.row(kk);
                float acc = 0.0f;
                for (std::size_t j = 0; j < w.cols; ++j) acc += wrow[j] * dzi[j];
                dpi[kk] = acc;
            }
        }
        const Matrix& pre = trace.pre_activations[l - 1];
        if (spec.activation == Activation::relu) {
            for (std::size_t idx = 0; idx < dprev.data.size(); ++idx)
                if (pre.data[idx] <= 0.0f) dprev.data[idx] = 0.0f;
        } else {
            for (std::size_t idx = 0; idx < dprev.data.size(); ++idx) {
                const float t = std::tanh(pre.data[idx]);
                dprev.data[idx] *= 1.0f - t * t;
            }
        }
        dz = std::move(dprev);
    }
    return out;
}

Params sgd_step(const Params& params, const Params& grads, double lr) {
    if (lr <= 0.0) throw ConfigError("InvalidLearningRate", "lr must be > 0");
    if (params.layers.size() != grads.layers.size())
        throw DimensionError("gradient layer count does not match params");
    Params next = params;
    for (std::size_t l = 0; l < next.layers.size(); ++l) {
        auto& layer = next.layers[l];
        const auto& g = grads.layers[l];
        if (layer.weights.rows != g.weights.rows || layer.weights.cols != g.weights.cols ||
            layer.bias.size() != g.bias.size())
            throw DimensionError("gradient shapes do not match params at layer " + std::to_string(l));
        for (std::size_t i = 0; i < layer.weights.data.size(); ++i)
            layer.weights.data[i] -= static_cast<float>(lr) * g.weights.data[i];
        for (std::size_t i = 0; i < layer.bias.size(); ++i)
            layer.bias[i] -= static_cast<float>(lr) * g.bias[i];
    }
    if (!next.finite()) throw RangeError("non-finite parameter after sgd step");
    return next;
}

std::vector<std::vector<std::int32_t>> predict_topk(const ModelSpec& spec, const Params& params,
                                                    const Batch& batch, std::size_t k) {
    if (k < 1 || k > spec.num_classes)
        throw RangeError("k=" + std::to_string(k) + " outside [1, " + std::to_string(spec.num_classes) + "]");
    Matrix logits = forward(spec, params, batch);
    std::vector<std::vector<std::int32_t>> out(batch.size());
    std::vector<std::int32_t> order(spec.num_classes);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        std::iota(order.begin(), order.end(), 0);
        const float* zi = logits.row(i);
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                          [zi](std::int32_t a, std::int32_t b) {
                              if (zi[a] != zi[b]) return zi[a] > zi[b];
                              return a < b;
                          });
        out[i].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    }
    return out;
}

namespace {

constexpr std::uint32_t kWeightsFormatVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xFF));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw ParseError("weights blob truncated");
    std::uint32_t v = static_cast<std::uint32_t>(in[pos]) |
                      (static_cast<std::uint32_t>(in[pos + 1]) << 8) |
                      (static_cast<std::uint32_t>(in[pos + 2]) << 16) |
                      (static_cast<std::uint32_t>(in[pos + 3]) << 24);
    pos += 4;
    return v;
}

float get_f32(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    std::uint32_t v = get_u32(in, pos);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

}  // namespace

std::vector<std::uint8_t> serialize_weights(const Params& params) {
    std::vector<std::uint8_t> out;
    out.push_back('C');
    out.push_back('L');
    out.push_back('B');
    out.push_back('W');
    put_u32(out, kWeightsFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(params.layers.size()));
    for (const auto& layer : params.layers) {
        put_u32(out, static_cast<std::uint32_t>(layer.weights.rows));
        put_u32(out, static_cast<std::uint32_t>(layer.weights.cols));
        for (float w : layer.weights.data) put_f32(out, w);
        for (float b : layer.bias) put_f32(out, b);
    }
    return out;
}

Params deserialize_weights(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4 || bytes[0] != 'C' || bytes[1] != 'L' || bytes[2] != 'B' || bytes[3] != 'W')
        throw ParseError("weights blob missing CLBW magic");
    std::size_t pos = 4;
    const std::uint32_t version = get_u32(bytes, pos);
    if (version != kWeightsFormatVersion)
        throw ParseError("unsupported weights format version " + std::to_string(version));
    const std::uint32_t layer_count = get_u32(bytes, pos);
    Params params;
    for (std::uint32_t l = 0; l < layer_count; ++l) {
        LayerParams layer;
        const std::uint32_t rows = get_u32(bytes, pos);
        const std::uint32_t cols = get_u32(bytes, pos);
        layer.weights = Matrix(rows, cols);
        for (auto& w : layer.weights.data) w = get_f32(bytes, pos);
        layer.bias.resize(cols);
        for (auto& b : layer.bias) b = get_f32(bytes, pos);
        params.layers.push_back(std::move(layer));
    }
    if (pos != bytes.size()) throw ParseError("trailing bytes after weights blob");
    return params;
}

}  // namespace clb
