#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace neursplit {

enum class ActivationKind { ReLU, ReGLU };

std::string to_string(ActivationKind kind);
ActivationKind activation_from_string(const std::string& name);

// Row-major float32 matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

    float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
    std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }

    bool empty() const { return data.empty(); }
    bool operator==(const Matrix&) const = default;
};

struct ModelConfig {
    std::size_t num_layers = 1;
    std::size_t hidden_dim = 1;       // d
    std::size_t intermediate_dim = 1; // m
    ActivationKind activation = ActivationKind::ReLU;

    void check() const;
    bool operator==(const ModelConfig&) const = default;
};

// One MLP block. Neuron i is row i of fc1 (and gate) together with column i of fc2.
// fc1_bias is added to fc1*x before gating; gate_bias to gate*x (ReGLU only).
// Empty bias vectors mean "absent".
struct LayerWeights {
    Matrix fc1;  // m x d
    Matrix fc2;  // d x m
    Matrix gate; // m x d, ReGLU only
    std::vector<float> fc1_bias;
    std::vector<float> gate_bias;

    // Throws Error naming the layer and the expected/actual shape.
    void check(const ModelConfig& config, std::size_t layer) const;
    std::size_t neurons() const { return fc1.rows; }
    std::size_t dim() const { return fc1.cols; }
    bool gated() const { return !gate.empty(); }
    bool operator==(const LayerWeights&) const = default;
};

struct Model {
    ModelConfig config;
    std::vector<LayerWeights> layers;

    void check() const;
    std::size_t neuron_count() const { return config.num_layers * config.intermediate_dim; }
    // Weight bytes for one neuron of a layer: fc1 row, fc2 column, gate row, biases.
    std::uint64_t neuron_bytes(std::size_t layer) const;
    std::uint64_t total_bytes() const;
    std::uint64_t parameter_count() const;
    bool operator==(const Model&) const = default;
};

struct NeuronId {
    std::uint32_t layer = 0;
    std::uint32_t index = 0;

    auto operator<=>(const NeuronId&) const = default;
};

struct ActivationMask {
    std::uint32_t layer = 0;
    std::vector<std::uint32_t> active; // strictly ascending

    std::size_t size() const { return active.size(); }
    bool contains(std::uint32_t i) const;
    // Throws if indices are unsorted, duplicated or >= m.
    void check(std::size_t m) const;
    static ActivationMask all(std::uint32_t layer, std::size_t m);
    bool operator==(const ActivationMask&) const = default;
};

struct SparseVector {
    std::vector<std::uint32_t> index; // ascending
    std::vector<float> value;

    std::size_t size() const { return index.size(); }
};

// Instrumentation for the sparse operators. Counters are atomic so one
// instance may be shared by concurrent executors.
struct OpCounter {
    std::atomic<std::uint64_t> row_dots{0}; // neurons whose FC1 side was evaluated
    std::atomic<std::uint64_t> col_axpys{0}; // FC2 columns accumulated
    std::atomic<std::uint64_t> macs{0};

    void reset() {
        row_dots = 0;
        col_axpys = 0;
        macs = 0;
    }
};

struct MlpOutput {
    std::vector<float> y;
    std::vector<float> h;
    ActivationMask mask;
};

// Ascending-order dot product accumulated in double.
double dot(std::span<const float> a, std::span<const float> b);

// Gated FC1 value of one neuron; returns 0 when the neuron is inactive and
// reports activity through `active`. Shared by every execution path so all of
// them produce bit-identical per-neuron values.
float neuron_value(std::span<const float> fc1_row, std::span<const float> gate_row, float fc1_bias,
                   float gate_bias, std::span<const float> x, bool& active);

float neuron_value(const LayerWeights& w, std::size_t i, std::span<const float> x, bool& active);

MlpOutput dense_mlp_forward(const LayerWeights& w, std::span<const float> x, std::uint32_t layer = 0);

// Only the rows listed in the mask are read. Masked-in neurons that turn out
// inactive are kept with value 0; `fired`, when given, receives their flags.
SparseVector sparse_fc1_rows(const LayerWeights& w, std::span<const float> x, const ActivationMask& mask,
                             OpCounter* counter = nullptr, std::vector<std::uint8_t>* fired = nullptr);

// FC2 partial sums are kept in double: float products are exact there, so
// splitting the neuron set across units changes the result only below float
// resolution, and rounding once at the merge recovers the dense output.
using Partial = std::vector<double>;

// Sum of h_i * col_i(fc2) over the mask, accumulated in ascending neuron order.
Partial sparse_fc2_cols(const Matrix& fc2, const SparseVector& h_partial, const ActivationMask& mask,
                        OpCounter* counter = nullptr);

std::vector<float> round_partial(std::span<const double> part);

std::vector<float> merge_partials(std::span<const double> fast_part, std::span<const double> slow_part);

struct StackOutput {
    std::vector<float> y;
    std::vector<ActivationMask> masks;
};

// Runs every layer in sequence; the output of layer l is the input of layer l+1.
StackOutput forward(const Model& model, std::span<const float> x);

// Max abs difference divided by max abs reference value (0 when both are zero).
double max_relative_error(std::span<const float> actual, std::span<const float> reference);

} // namespace neursplit
