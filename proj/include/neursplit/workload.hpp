#pragma once

#include <cstdint>
#include <vector>

#include "neursplit/runtime.hpp"
#include "neursplit/tensor.hpp"

namespace neursplit {

// Synthetic stand-in for a profiled corpus: a toy MLP stack whose neurons fire
// with Zipf-distributed frequencies on the generated inputs.
struct WorkloadSpec {
    std::size_t num_layers = 4;
    std::size_t hidden_dim = 64;
    std::size_t intermediate_dim = 256;
    ActivationKind activation = ActivationKind::ReLU;
    double sparsity = 0.9;  // mean fraction of inactive neurons per input
    double zipf_s = 1.2;    // power-law exponent over neuron ranks
    std::size_t rank = 2;   // rank of the mask-determining matrix (0 = full rank)
    std::size_t num_inputs = 1000;
    std::uint64_t seed = 1;
};

struct Workload {
    Model model;
    std::vector<std::vector<float>> inputs;
    std::vector<double> target_frequency; // per neuron, layer-major
};

// p_r = min(1, c * r^-s) for ranks r = 1..m, with c chosen so the mean is
// `mean_active`. Returned in rank order (hottest first).
std::vector<double> zipf_frequencies(std::size_t m, double s, double mean_active);

std::vector<std::vector<float>> sample_inputs(std::size_t dim, std::size_t count, Rng& rng);

// Builds the planted model. Each layer's mask-determining bias is calibrated
// on the layer inputs induced by `inputs`, so the emitted trace reproduces the
// target frequencies up to rounding of p * num_inputs.
Workload generate_workload(const WorkloadSpec& spec);

// Random dense model with optional biases; used by tests and the exactness suite.
Model random_model(const ModelConfig& config, Rng& rng, bool with_bias = false);

} // namespace neursplit
