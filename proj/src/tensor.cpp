#include "neursplit/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "neursplit/error.hpp"

namespace neursplit {

namespace {

std::string shape(std::size_t r, std::size_t c) { return std::to_string(r) + "x" + std::to_string(c); }

void check_matrix(const Matrix& mat, std::size_t rows, std::size_t cols, const char* name, std::size_t layer) {
    if (mat.rows != rows || mat.cols != cols || mat.data.size() != rows * cols) {
        fail("layer " + std::to_string(layer) + ": " + name + " expected " + shape(rows, cols) + ", got " +
             shape(mat.rows, mat.cols));
    }
}

} // namespace

std::string to_string(ActivationKind kind) { return kind == ActivationKind::ReLU ? "relu" : "reglu"; }

ActivationKind activation_from_string(const std::string& name) {
    if (name == "relu") return ActivationKind::ReLU;
    if (name == "reglu") return ActivationKind::ReGLU;
    fail("unknown activation '" + name + "'");
}

void ModelConfig::check() const {
    require(num_layers >= 1, "num_layers must be >= 1");
    require(hidden_dim >= 1, "hidden_dim must be >= 1");
    require(intermediate_dim >= 1, "intermediate_dim must be >= 1");
}

void LayerWeights::check(const ModelConfig& config, std::size_t layer) const {
    const std::size_t d = config.hidden_dim;
    const std::size_t m = config.intermediate_dim;
    check_matrix(fc1, m, d, "fc1", layer);
    check_matrix(fc2, d, m, "fc2", layer);
    if (config.activation == ActivationKind::ReGLU) {
        check_matrix(gate, m, d, "gate", layer);
    } else if (!gate.empty()) {
        fail("layer " + std::to_string(layer) + ": gate present on a relu model");
    }
    if (!fc1_bias.empty() && fc1_bias.size() != m) {
        fail("layer " + std::to_string(layer) + ": fc1_bias expected " + std::to_string(m) + ", got " +
             std::to_string(fc1_bias.size()));
    }
    if (!gate_bias.empty() && (gate.empty() || gate_bias.size() != m)) {
        fail("layer " + std::to_string(layer) + ": gate_bias expected " + std::to_string(gate.empty() ? 0 : m) +
             ", got " + std::to_string(gate_bias.size()));
    }
}

void Model::check() const {
    config.check();
    require(layers.size() == config.num_layers, "model has " + std::to_string(layers.size()) +
                                                    " layers, config says " + std::to_string(config.num_layers));
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].check(config, l);
}

std::uint64_t Model::neuron_bytes(std::size_t layer) const {
    const auto& w = layers.at(layer);
    std::uint64_t floats = 2 * config.hidden_dim;
    if (w.gated()) floats += config.hidden_dim;
    if (!w.fc1_bias.empty()) floats += 1;
    if (!w.gate_bias.empty()) floats += 1;
    return floats * sizeof(float);
}

std::uint64_t Model::total_bytes() const {
    std::uint64_t total = 0;
    for (std::size_t l = 0; l < layers.size(); ++l) total += neuron_bytes(l) * config.intermediate_dim;
    return total;
}

std::uint64_t Model::parameter_count() const { return total_bytes() / sizeof(float); }

bool ActivationMask::contains(std::uint32_t i) const { return std::binary_search(active.begin(), active.end(), i); }

void ActivationMask::check(std::size_t m) const {
    for (std::size_t k = 0; k < active.size(); ++k) {
        if (active[k] >= m) {
            fail("mask index " + std::to_string(active[k]) + " out of range for layer " + std::to_string(layer) +
                 " (m=" + std::to_string(m) + ")");
        }
        if (k > 0 && active[k] <= active[k - 1]) {
            fail("mask for layer " + std::to_string(layer) + " is not strictly ascending");
        }
    }
}

ActivationMask ActivationMask::all(std::uint32_t layer, std::size_t m) {
    ActivationMask mask{layer, std::vector<std::uint32_t>(m)};
    for (std::size_t i = 0; i < m; ++i) mask.active[i] = static_cast<std::uint32_t>(i);
    return mask;
}

double dot(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) acc += double(a[k]) * double(b[k]);
    return acc;
}

float neuron_value(std::span<const float> fc1_row, std::span<const float> gate_row, float fc1_bias, float gate_bias,
                   std::span<const float> x, bool& active) {
    if (gate_row.empty()) {
        const double pre = dot(fc1_row, x) + double(fc1_bias);
        active = pre > 0.0;
        return active ? static_cast<float>(pre) : 0.0f;
    }
    const double g = dot(gate_row, x) + double(gate_bias);
    active = g > 0.0;
    if (!active) return 0.0f;
    return static_cast<float>(g * (dot(fc1_row, x) + double(fc1_bias)));
}

float neuron_value(const LayerWeights& w, std::size_t i, std::span<const float> x, bool& active) {
    const std::span<const float> gate_row = w.gated() ? w.gate.row(i) : std::span<const float>{};
    const float b1 = w.fc1_bias.empty() ? 0.0f : w.fc1_bias[i];
    const float bg = w.gate_bias.empty() ? 0.0f : w.gate_bias[i];
    return neuron_value(w.fc1.row(i), gate_row, b1, bg, x, active);
}

MlpOutput dense_mlp_forward(const LayerWeights& w, std::span<const float> x, std::uint32_t layer) {
    const std::size_t m = w.neurons();
    const std::size_t d = w.dim();
    if (x.size() != d) {
        fail("layer " + std::to_string(layer) + ": input expected length " + std::to_string(d) + ", got " +
             std::to_string(x.size()));
    }
    if (w.fc2.rows != d || w.fc2.cols != m) {
        fail("layer " + std::to_string(layer) + ": fc2 expected " + shape(d, m) + ", got " +
             shape(w.fc2.rows, w.fc2.cols));
    }
    MlpOutput out;
    out.mask.layer = layer;
    out.h.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        bool active = false;
        out.h[i] = neuron_value(w, i, x, active);
        if (active) out.mask.active.push_back(static_cast<std::uint32_t>(i));
    }
    Partial acc(d, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double hi = out.h[i];
        if (hi == 0.0) continue;
        for (std::size_t r = 0; r < d; ++r) acc[r] += hi * double(w.fc2(r, i));
    }
    out.y = round_partial(acc);
    return out;
}

SparseVector sparse_fc1_rows(const LayerWeights& w, std::span<const float> x, const ActivationMask& mask,
                             OpCounter* counter, std::vector<std::uint8_t>* fired) {
    require(x.size() == w.dim(), "sparse_fc1_rows: input expected length " + std::to_string(w.dim()) + ", got " +
                                     std::to_string(x.size()));
    mask.check(w.neurons());
    SparseVector out;
    out.index.reserve(mask.size());
    out.value.reserve(mask.size());
    if (fired != nullptr) fired->assign(mask.size(), 0);
    for (std::size_t k = 0; k < mask.size(); ++k) {
        const std::uint32_t i = mask.active[k];
        bool active = false;
        out.index.push_back(i);
        out.value.push_back(neuron_value(w, i, x, active));
        if (fired != nullptr) (*fired)[k] = active ? 1 : 0;
    }
    if (counter != nullptr) {
        counter->row_dots += mask.size();
        counter->macs += mask.size() * w.dim() * (w.gated() ? 2 : 1);
    }
    return out;
}

Partial sparse_fc2_cols(const Matrix& fc2, const SparseVector& h_partial, const ActivationMask& mask,
                        OpCounter* counter) {
    mask.check(fc2.cols);
    require(h_partial.index.size() == h_partial.value.size(), "sparse_fc2_cols: malformed sparse vector");
    // Support must be a subset of the mask; both are ascending so a merge walk suffices.
    std::size_t k = 0;
    for (const std::uint32_t i : h_partial.index) {
        while (k < mask.active.size() && mask.active[k] < i) ++k;
        if (k == mask.active.size() || mask.active[k] != i) {
            fail("sparse_fc2_cols: neuron " + std::to_string(i) + " is outside the mask of layer " +
                 std::to_string(mask.layer));
        }
    }
    Partial y(fc2.rows, 0.0);
    for (std::size_t s = 0; s < h_partial.size(); ++s) {
        const std::uint32_t i = h_partial.index[s];
        const double hi = h_partial.value[s];
        if (hi == 0.0) continue;
        for (std::size_t r = 0; r < fc2.rows; ++r) y[r] += hi * double(fc2(r, i));
    }
    if (counter != nullptr) {
        counter->col_axpys += h_partial.size();
        counter->macs += h_partial.size() * fc2.rows;
    }
    return y;
}

std::vector<float> round_partial(std::span<const double> part) {
    std::vector<float> out(part.size());
    for (std::size_t r = 0; r < out.size(); ++r) out[r] = static_cast<float>(part[r]);
    return out;
}

std::vector<float> merge_partials(std::span<const double> fast_part, std::span<const double> slow_part) {
    require(fast_part.size() == slow_part.size(), "merge_partials: length mismatch " +
                                                      std::to_string(fast_part.size()) + " vs " +
                                                      std::to_string(slow_part.size()));
    std::vector<float> out(fast_part.size());
    for (std::size_t r = 0; r < out.size(); ++r) out[r] = static_cast<float>(fast_part[r] + slow_part[r]);
    return out;
}

StackOutput forward(const Model& model, std::span<const float> x) {
    StackOutput out;
    out.y.assign(x.begin(), x.end());
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto step = dense_mlp_forward(model.layers[l], out.y, static_cast<std::uint32_t>(l));
        out.y = std::move(step.y);
        out.masks.push_back(std::move(step.mask));
    }
    return out;
}

double max_relative_error(std::span<const float> actual, std::span<const float> reference) {
    require(actual.size() == reference.size(), "max_relative_error: length mismatch");
    double diff = 0.0;
    double scale = 0.0;
    for (std::size_t i = 0; i < actual.size(); ++i) {
        diff = std::max(diff, std::abs(static_cast<double>(actual[i]) - reference[i]));
        scale = std::max(scale, std::abs(static_cast<double>(reference[i])));
    }
    if (diff == 0.0) return 0.0;
    return scale == 0.0 ? diff : diff / scale;
}

} // namespace neursplit
