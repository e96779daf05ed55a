#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "neursplit/tensor.hpp"

namespace neursplit {

// Per-neuron activation counts over a profiled corpus, layer-major.
struct ActivationStats {
    std::size_t num_layers = 0;
    std::size_t intermediate_dim = 0;
    std::uint64_t total_inputs = 0;
    std::vector<std::uint64_t> counts;

    static ActivationStats zeros(std::size_t num_layers, std::size_t m);

    std::size_t neuron_count() const { return counts.size(); }
    std::size_t flat(NeuronId n) const { return std::size_t(n.layer) * intermediate_dim + n.index; }
    NeuronId id(std::size_t flat_index) const;
    std::uint64_t count(NeuronId n) const { return counts.at(flat(n)); }
    double frequency(NeuronId n) const;
    std::uint64_t total_activations() const;
    std::span<const std::uint64_t> layer_counts(std::size_t layer) const;

    void record(const ActivationMask& mask);
    // Counts add, totals add. Throws on a dimension mismatch.
    void merge(const ActivationStats& other);
    void check() const;
    bool operator==(const ActivationStats&) const = default;
};

struct CdfPoint {
    double neuron_fraction = 0.0;
    double mass_fraction = 0.0;
    std::uint64_t cumulative = 0; // activations covered so far
};
using CdfCurve = std::vector<CdfPoint>;

// Corpus is split over `workers` shards (0 = thread budget) and merged;
// the result does not depend on the shard count.
ActivationStats profile(const Model& model, std::span<const std::vector<float>> corpus, std::size_t workers = 0);

// Per input, per layer true masks.
std::vector<std::vector<ActivationMask>> record_masks(const Model& model, std::span<const std::vector<float>> corpus);

// (layer input, true mask) pairs for one layer, used to train predictors.
struct LayerSample {
    std::vector<float> x;
    ActivationMask mask;
};
std::vector<std::vector<LayerSample>> collect_layer_samples(const Model& model,
                                                            std::span<const std::vector<float>> corpus);

// Neurons by descending count, ties by ascending NeuronId.
std::vector<NeuronId> activation_order(const ActivationStats& stats);

// Starts at (0, 0); one point per neuron in activation order.
CdfCurve activation_cdf(const ActivationStats& stats);

// Smallest neuron fraction whose cumulative mass reaches `mass`.
double neuron_fraction_for_mass(const CdfCurve& curve, double mass);

// Smallest prefix of the activation order whose mass is >= coverage.
std::vector<NeuronId> hot_set(const ActivationStats& stats, double coverage);

// |topA ∩ topB| / |topA| with top = ceil(top_fraction * N) neurons by count.
double overlap(const ActivationStats& a, const ActivationStats& b, double top_fraction);

// Gini coefficient of the counts of one layer (0 = uniform).
double gini(std::span<const std::uint64_t> counts);

void save_stats(const ActivationStats& stats, const std::filesystem::path& path);
ActivationStats load_stats(const std::filesystem::path& path);

} // namespace neursplit
