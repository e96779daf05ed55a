#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neursplit/placement.hpp"
#include "neursplit/runtime.hpp"
#include "neursplit/tensor.hpp"

namespace neursplit {

// Memory-bound timing: a neuron costs its weight bytes over the unit's bandwidth.
struct LayerLatency {
    std::uint32_t layer = 0;
    double fast_s = 0.0;
    double slow_s = 0.0;
    double sync_s = 0.0;
    double predict_s = 0.0;
    double total_s = 0.0;
    std::uint64_t fast_active = 0;
    std::uint64_t slow_active = 0;

    LayerLatency& operator+=(const LayerLatency& o);
};

struct LatencyBreakdown {
    std::string label;
    std::uint64_t inputs = 0;
    std::vector<LayerLatency> layers; // summed over inputs
    LayerLatency totals;              // summed over layers

    // Fraction of activated-neuron computations done on FAST (0 when nothing fired).
    double fast_load_share() const;
};

struct SimOptions {
    // Predictor cost as a fraction of the layer's compute time, serialized on FAST.
    double predictor_overhead = 0.10;
    // The random baseline reports the mean over this many independent placements.
    std::size_t random_draws = 16;
};

// One layer for one input. `units` maps each neuron index of the layer to its unit.
LayerLatency layer_latency(std::span<const Unit> units, const ActivationMask& mask, double t_fast, double t_slow,
                           double t_sync, const SimOptions& options = {});

// Per-input, per-layer masks (as produced by record_masks).
using MaskTrace = std::vector<std::vector<ActivationMask>>;

// Per-layer neuron bytes as recorded in the policy's batches.
std::vector<std::uint64_t> policy_neuron_bytes(const PlacementPolicy& policy);

LatencyBreakdown simulate(const PlacementPolicy& policy, const MaskTrace& trace, const SimOptions& options = {});

enum class BaselineMode { DenseSplit, PoLayerwise, EngineRandom };

std::string to_string(BaselineMode mode);

// Whole layers packed onto FAST in layer order while they fit the budget.
std::vector<Unit> layer_owners(std::span<const std::uint64_t> neuron_bytes, std::size_t m, std::uint64_t budget);

// Neuron-granular random placement: shuffled batches take FAST while they fit.
PlacementPolicy random_policy(std::size_t num_layers, std::size_t m, std::span<const std::uint64_t> neuron_bytes,
                              const DevicePair& devices, std::uint64_t reserved_fast_bytes, Rng& rng,
                              std::size_t batch_size = 1);

// Baselines use the reference policy's devices, dimensions and FAST budget
// (capacity minus reserved bytes), so every mode competes for the same bytes.
// Layer-split modes pay one sync when a non-empty layer runs on a different
// unit than the layer before it.
LatencyBreakdown baseline_latency(BaselineMode mode, const PlacementPolicy& reference, const MaskTrace& trace,
                                  const SimOptions& options = {}, std::uint64_t seed = 0);

// Smallest b <= max_batch with bytes/pcie + b*bytes/fast < b*bytes/slow.
std::optional<std::uint64_t> breakeven_batch(const DevicePair& devices, double bytes, double pcie_bandwidth,
                                             std::uint64_t max_batch = 1024);

} // namespace neursplit
